#![no_main]
use libfuzzer_sys::fuzz_target;

use commqr::store::Header;
use commqr::BlockStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(h) = Header::decode(data) {
        assert_eq!(Header::decode(&h.encode()).ok(), Some(h));
    }
    if let Ok(mut s) = BlockStore::from_bytes(data) {
        let _ = s.to_matrix();
    }
});
