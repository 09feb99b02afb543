#![no_main]

use libfuzzer_sys::fuzz_target;
use mcm_bench::PriceTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = PriceTable::read_csv(data) {
        let text = table.to_csv_string().expect("render");
        let again = PriceTable::from_csv_str(&text).expect("reparse");
        assert_eq!(again.to_csv_string().expect("render"), text);
        let _ = table.fingerprint();
    }
});
