#![no_main]

use libfuzzer_sys::fuzz_target;
use subid_core::dependency::DetectorNetwork;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = DetectorNetwork::from_bytes(data) {
        assert_eq!(DetectorNetwork::from_bytes(&net.to_bytes()).expect("round trip"), net);
    }
});
