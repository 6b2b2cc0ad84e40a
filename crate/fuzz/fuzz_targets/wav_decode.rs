#![no_main]

use libfuzzer_sys::fuzz_target;
use subid_core::wav::{decode_wav, encode_wav};

fuzz_target!(|data: &[u8]| {
    if let Ok(audio) = decode_wav(data) {
        assert!(audio.samples.iter().all(|v| v.is_finite()));
        let _ = encode_wav(&audio, Default::default());
    }
});
