#![no_main]

use libfuzzer_sys::fuzz_target;
use qbfchan::{parse_qdimacs, serialize_qdimacs};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = parse_qdimacs(text) {
        // anything accepted must survive a round trip unchanged
        let out = serialize_qdimacs(&f);
        let again = parse_qdimacs(&out).expect("serialized output parses");
        assert_eq!(again, f);
        assert_eq!(serialize_qdimacs(&again), out);
    }
});
