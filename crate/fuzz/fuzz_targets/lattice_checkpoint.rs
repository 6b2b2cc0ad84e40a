#![no_main]

use libfuzzer_sys::fuzz_target;
use subid_core::lattice::LatticeFilter;

fuzz_target!(|data: &[u8]| {
    if let Ok(filter) = LatticeFilter::from_bytes(data) {
        let bytes = filter.to_bytes().expect("decoded filter encodes");
        LatticeFilter::from_bytes(&bytes).expect("re-encoded checkpoint decodes");
    }
});
