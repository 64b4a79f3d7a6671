#![no_main]

use libfuzzer_sys::fuzz_target;
use qbc_core::io::{parse_protocol_bytes, ParseOptions};

fuzz_target!(|data: &[u8]| {
    // errors are expected; panics and hangs are not
    let _ = parse_protocol_bytes(data, ParseOptions { complete: true });
    let _ = parse_protocol_bytes(data, ParseOptions { complete: false });
});
