#![no_main]

use libfuzzer_sys::fuzz_target;
use mcm_bench::{Axes, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(axes) = Axes::parse(text) {
        let again = Axes::parse(&axes.to_string()).expect("display parses");
        assert_eq!(again, axes);
        if axes.cardinality() <= 4096 {
            assert_eq!(axes.expand(&RunConfig::default()).len(), axes.cardinality());
        }
    }
});
