#![no_main]

use libfuzzer_sys::fuzz_target;
use qbc_core::io::ScanFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ScanFile::from_json(text);
    }
});
