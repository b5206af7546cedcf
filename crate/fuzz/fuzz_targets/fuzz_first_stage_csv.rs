#![no_main]

use libfuzzer_sys::fuzz_target;
use stagdid::selection::load_first_stage_reader;

fuzz_target!(|data: &[u8]| {
    let _ = load_first_stage_reader(data);
});
