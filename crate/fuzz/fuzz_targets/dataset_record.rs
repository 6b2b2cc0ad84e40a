#![no_main]

use libfuzzer_sys::fuzz_target;
use subid_core::dependency::Example;

fuzz_target!(|data: &[u8]| {
    if let Ok(ex) = Example::from_bytes(data) {
        let again = Example::from_bytes(&ex.to_bytes()).expect("round trip");
        assert_eq!(again.to_bytes(), ex.to_bytes());
    }
});
