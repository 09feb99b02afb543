use mcm_core::market::{build_vol, simulate_paths, TimeGrid, TriangularVol, VolSpec};
use mcm_core::pricer::{conditional_expectation_check, CheckOptions};
use mcm_core::weights::{
    compute_pi, compute_pi_covariance, gamma_bruteforce, gamma_recursive, path_weights,
    raw_continuation, GammaPlan, PiCovariance, WeightError,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn piecewise3() -> TriangularVol {
    build_vol(
        3,
        &VolSpec::Piecewise {
            breaks: vec![0.25, 0.6],
            matrices: vec![
                vec![
                    vec![0.2, 0.0, 0.0],
                    vec![0.1, 0.25, 0.0],
                    vec![-0.05, 0.1, 0.3],
                ],
                vec![
                    vec![0.3, 0.0, 0.0],
                    vec![0.05, 0.2, 0.0],
                    vec![0.1, -0.1, 0.15],
                ],
                vec![
                    vec![0.15, 0.0, 0.0],
                    vec![-0.1, 0.3, 0.0],
                    vec![0.2, 0.05, 0.25],
                ],
            ],
        },
    )
    .unwrap()
}

fn lower2() -> TriangularVol {
    build_vol(
        2,
        &VolSpec::Constant {
            matrix: vec![vec![0.2, 0.0], vec![0.1, 0.2]],
        },
    )
    .unwrap()
}

#[test]
fn pi_has_unit_mean() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let one = build_vol(1, &VolSpec::diagonal(0.2)).unwrap();
    let paths = simulate_paths(&one, &grid, &[100.0], 0.1, 1 << 16, 21).unwrap();
    let pi = compute_pi(&paths, 1, 2).unwrap();
    let (m, se) = mean_and_stderr(pi.component(0));
    assert!((m - 1.0).abs() <= 4.0 * se, "{m} (se {se})");

    let grid = TimeGrid::new(1.0, 4).unwrap();
    let vol = piecewise3();
    let paths = simulate_paths(&vol, &grid, &[100.0; 3], 0.1, 1 << 16, 22).unwrap();
    for (s, t) in [(1, 2), (2, 4)] {
        let pi = compute_pi(&paths, s, t).unwrap();
        for k in 0..3 {
            let (m, se) = mean_and_stderr(pi.component(k));
            assert!((m - 1.0).abs() <= 4.0 * se, "k={k}: {m} (se {se})");
        }
    }
}

fn check_covariance(vol: &TriangularVol, grid: &TimeGrid, s: usize, t: usize, seed: u64) {
    let d = vol.dim();
    let n = 1 << 17;
    let paths = simulate_paths(vol, grid, &vec![100.0; d], 0.0, n, seed).unwrap();
    let pi = compute_pi(&paths, s, t).unwrap();
    let cov = compute_pi_covariance(vol, grid.date(s), grid.date(t));
    for k in 0..d {
        for l in k..d {
            let (a, b) = (pi.component(k), pi.component(l));
            let prods: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - 1.0) * (y - 1.0))
                .collect();
            let (m, se) = mean_and_stderr(&prods);
            assert!(
                (m - cov.get(k, l)).abs() <= 4.0 * se,
                "C[{k}][{l}] = {} vs MC {m} (se {se})",
                cov.get(k, l)
            );
        }
    }
}

#[test]
fn covariance_matches_monte_carlo_two_assets() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let vol = lower2();
    let cov = compute_pi_covariance(&vol, 0.5, 1.0);
    // rho = [[5, 0], [-2.5, 5]], so C = (1/s + 1/(t-s)) rho' rho.
    let f = 1.0 / 0.5 + 1.0 / 0.5;
    let want = [[f * (25.0 + 6.25), f * (-12.5)], [f * (-12.5), f * 25.0]];
    for k in 0..2 {
        for l in 0..2 {
            assert!((cov.get(k, l) - want[k][l]).abs() < 1e-10);
        }
    }
    check_covariance(&vol, &grid, 1, 2, 31);
}

#[test]
fn covariance_matches_monte_carlo_piecewise() {
    let grid = TimeGrid::new(1.0, 5).unwrap();
    check_covariance(&piecewise3(), &grid, 2, 3, 32);
    check_covariance(&piecewise3(), &grid, 1, 5, 33);
}

#[test]
fn covariance_is_symmetric_psd() {
    let vol = piecewise3();
    let cov = compute_pi_covariance(&vol, 0.3, 0.9);
    let m = &cov.matrix;
    assert!((m - m.transpose()).abs().max() < 1e-14);
    let eig = m.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&v| v > 0.0));
}

#[test]
fn diagonal_pi_matches_bridge_weight_pathwise() {
    let sig = [0.2, 0.3, 0.15];
    let vol = build_vol(
        3,
        &VolSpec::Diagonal {
            sigma: sig.to_vec(),
        },
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let paths = simulate_paths(&vol, &grid, &[100.0; 3], 0.1, 500, 4).unwrap();
    let (si, ti) = (1, 3);
    let (s, t) = (grid.date(si), grid.date(ti));
    let pi = compute_pi(&paths, si, ti).unwrap();
    let gamma = GammaPlan::new(&compute_pi_covariance(&vol, s, t)).eval_paths(&pi);
    for p in 0..500 {
        let mut prod = 1.0;
        for k in 0..3 {
            let ws = paths.w(si, k)[p];
            let wt = paths.w(ti, k)[p];
            let bridge = (t - s) * (ws + sig[k] * s) - s * (wt - ws);
            let want = bridge / (sig[k] * s * (t - s));
            assert!((pi.component(k)[p] - want).abs() < 1e-12);
            prod *= pi.component(k)[p];
        }
        assert!((gamma.values[p] - prod).abs() <= 1e-12 * (1.0 + prod.abs()));
    }
}

#[test]
fn indicator_saturation_reduces_to_plain_means() {
    let vol = lower2();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let paths = simulate_paths(&vol, &grid, &[100.0, 100.0], 0.1, 4096, 8).unwrap();
    let g: Vec<f64> = paths.s(2, 0).iter().map(|v| (v - 95.0).max(0.0)).collect();
    let w = path_weights(&paths, 1, 2).unwrap();
    let num = g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / 4096.0;
    let den = w.iter().sum::<f64>() / 4096.0;
    // The saturated denominator has zero mean, so either sign can come out.
    match raw_continuation(&paths, 1, 2, &[1e-9, 1e-9], &g) {
        Ok(r) => {
            assert!((r.numerator - num).abs() <= 1e-12 * num.abs());
            assert!((r.denominator - den).abs() <= 1e-12 * den.abs());
        }
        Err(WeightError::DegenerateDenominator { value, .. }) => {
            assert!(den <= 0.0);
            assert!((value - den).abs() <= 1e-12 * den.abs());
        }
        Err(e) => panic!("{e}"),
    }
    assert_eq!(path_weights(&paths, 1, 2).unwrap(), w);
}

#[test]
fn degenerate_region_is_reported() {
    let vol = build_vol(1, &VolSpec::diagonal(0.2)).unwrap();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let paths = simulate_paths(&vol, &grid, &[100.0], 0.1, 256, 8).unwrap();
    let g = vec![1.0; 256];
    let err = raw_continuation(&paths, 1, 2, &[1e6], &g).unwrap_err();
    assert!(matches!(err, WeightError::DegenerateDenominator { .. }));
}

#[test]
fn raw_quotient_tracks_lognormal_conditional_law() {
    let opts = CheckOptions::default();
    for (x, tol) in [(80.0, 0.02), (100.0, 0.01), (120.0, 0.02)] {
        let r = conditional_expectation_check(0.5, 1.0, x, 100.0, &opts).unwrap();
        assert!(r.relative_error() < tol, "x={x}: {r:?}");
    }
}

fn random_instance(d: usize) -> impl Strategy<Value = (Vec<f64>, PiCovariance)> {
    (
        proptest::collection::vec(-3.0f64..3.0, d),
        proptest::collection::vec(-2.0f64..2.0, d * d),
    )
        .prop_map(move |(pi, c)| {
            let m = DMatrix::from_fn(d, d, |i, j| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                c[a * d + b]
            });
            (pi, PiCovariance { matrix: m })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn recursion_matches_enumeration(
        (pi, cov) in (1usize..=8).prop_flat_map(random_instance)
    ) {
        let rec = gamma_recursive(&pi, &cov).unwrap();
        let bf = gamma_bruteforce(&pi, &cov).unwrap();
        prop_assert!((rec - bf).abs() / (1.0 + bf.abs()) <= 1e-10, "{} vs {}", rec, bf);
    }

    #[test]
    fn sparse_covariance_matches_enumeration(
        (pi, cov, mask) in (2usize..=7).prop_flat_map(|d| (random_instance(d), proptest::collection::vec(any::<bool>(), d * d)))
            .prop_map(|((pi, cov), mask)| (pi, cov, mask))
    ) {
        let d = pi.len();
        let mut m = cov.matrix.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                if mask[i * d + j] {
                    m[(i, j)] = 0.0;
                    m[(j, i)] = 0.0;
                }
            }
        }
        let cov = PiCovariance { matrix: m };
        let rec = gamma_recursive(&pi, &cov).unwrap();
        let bf = gamma_bruteforce(&pi, &cov).unwrap();
        prop_assert!((rec - bf).abs() / (1.0 + bf.abs()) <= 1e-10);
    }
}
