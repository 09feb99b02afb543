#![no_main]

use libfuzzer_sys::fuzz_target;
use mcm_bench::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        // Anything accepted must build its pricer inputs and survive a round trip.
        cfg.market().expect("validated market");
        cfg.payoff().expect("validated payoff");
        let again = RunConfig::from_json_str(&cfg.to_json_string()).expect("round trip");
        assert_eq!(again.to_json_string(), cfg.to_json_string());
    }
});
