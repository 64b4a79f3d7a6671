#![no_main]

use libfuzzer_sys::fuzz_target;
use qbc_core::io::{emit_protocol, parse_protocol_bytes, parse_protocol_str, ParseOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(protocol) = parse_protocol_bytes(data, ParseOptions::default()) else {
        return;
    };
    let text = emit_protocol(&protocol);
    let back = parse_protocol_str(&text, ParseOptions::default()).expect("emitted protocol must parse");
    for bit in 0..2 {
        assert_eq!(back.family(bit).raw_operators(), protocol.family(bit).raw_operators());
        assert_eq!(back.family(bit).weights(), protocol.family(bit).weights());
    }
    assert_eq!(back.priors(), protocol.priors());
    assert_eq!(emit_protocol(&back), text);
});
