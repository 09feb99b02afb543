#![no_main]

use libfuzzer_sys::fuzz_target;
use mcm_core::market::{build_vol, VolSpec};

fuzz_target!(|data: &[u8]| {
    let Some((&dim, rest)) = data.split_first() else {
        return;
    };
    let Ok(spec) = serde_json::from_slice::<VolSpec>(rest) else {
        return;
    };
    let dim = usize::from(dim % 12) + 1;
    if let Ok(vol) = build_vol(dim, &spec) {
        assert_eq!(vol.dim(), dim);
        for p in 0..vol.n_pieces() {
            let s = vol.sigma(p);
            for i in 0..dim {
                assert!(s[(i, i)] != 0.0 && s[(i, i)].is_finite());
                assert!(vol.rho(p)[(i, i)].is_finite());
            }
        }
    }
});
