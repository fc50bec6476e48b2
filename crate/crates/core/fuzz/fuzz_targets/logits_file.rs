#![no_main]

libfuzzer_sys::fuzz_target!(|data: &[u8]| cotkd_fuzz::logits_file(data));
