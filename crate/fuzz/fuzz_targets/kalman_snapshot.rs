#![no_main]

use libfuzzer_sys::fuzz_target;
use subid_core::kalman::MisoKalmanState;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = MisoKalmanState::from_bytes(data) {
        let again = MisoKalmanState::from_bytes(&state.to_bytes()).expect("re-encoded snapshot decodes");
        assert_eq!(again.to_bytes(), state.to_bytes());
    }
});
