#![no_main]

use libfuzzer_sys::fuzz_target;
use mcm_bench::PriceTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = PriceTable::from_json_str(text) {
        let json = table.to_json_string().expect("render");
        let again = PriceTable::from_json_str(&json).expect("reparse");
        assert_eq!(again.to_json_string().expect("render"), json);
    }
});
