#![no_main]

libfuzzer_sys::fuzz_target!(|data: &[u8]| cotkd_fuzz::curve_csv(data));
