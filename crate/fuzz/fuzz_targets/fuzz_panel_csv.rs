#![no_main]

use libfuzzer_sys::fuzz_target;
use stagdid::panel::{load_panel_reader, CsvSchema, ReformMapping};

fuzz_target!(|data: &[u8]| {
    // cohort-index mapping (the default schema)
    let _ = load_panel_reader(data, &CsvSchema::default());

    // calendar-year mapping exercises the reform-year parser too
    let calendar = CsvSchema {
        mapping: ReformMapping::Calendar {
            school_leaving_age: 14,
            window: (1930, 1960),
        },
        ..CsvSchema::default()
    };
    let _ = load_panel_reader(data, &calendar);
});
