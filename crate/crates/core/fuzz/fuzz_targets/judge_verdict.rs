#![no_main]

libfuzzer_sys::fuzz_target!(|data: &[u8]| cotkd_fuzz::judge_verdict(data));
