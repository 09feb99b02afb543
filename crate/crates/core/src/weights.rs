//! Malliavin weights `pi^k`, their covariance and the involution-sum weight `Gamma`.
//!
//! For dates `0 < s < t` and `k = 0..d`,
//!
//! ```text
//! pi^k = 1 + sum_{j >= k} int_0^t phi_jk(u) dW^j_u
//! phi_jk(u) = rho_jk(u) / s        on (0, s)
//!           = -rho_jk(u) / (t - s) on (s, t)
//! ```
//!
//! with `rho = sigma^{-1}`. `Gamma` is the signed sum over involutions `p` of
//! `prod_i A[i][p(i)]`, where `A` has `pi` on the diagonal, the covariance of
//! the `pi` above it and ones below it.

use std::collections::HashMap;

use itertools::Itertools;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::market::{AssetPaths, TriangularVol};

/// Largest dimension accepted by the enumeration oracle.
pub const MAX_BRUTEFORCE_DIM: usize = 8;

/// Denominator means below this fraction of the mean absolute weight are degenerate.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("conditioning date must be strictly positive")]
    SIndexZero,
    #[error("dates must satisfy s < t on the grid, got s index {s} and t index {t}")]
    InvalidDates { s: usize, t: usize },
    #[error("enumeration is limited to dimension {max}, got {dim}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("denominator mean {value} is below the floor {floor}")]
    DegenerateDenominator { value: f64, floor: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `pi^k` for every path, stored component-major: `values[k * n_paths + path]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiVector {
    pub dim: usize,
    pub n_paths: usize,
    pub values: Vec<f64>,
}

impl PiVector {
    pub fn component(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn path(&self, path: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|k| self.values[k * self.n_paths + path])
            .collect()
    }
}

/// Deterministic covariance matrix of the `pi^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiCovariance {
    pub matrix: DMatrix<f64>,
}

impl PiCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.matrix[(k, l)]
    }
}

/// `Gamma` for every path.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaWeight {
    pub values: Vec<f64>,
}

fn check_dates(paths: &AssetPaths, s_index: usize, t_index: usize) -> Result<(), WeightError> {
    if s_index == 0 {
        return Err(WeightError::SIndexZero);
    }
    if t_index <= s_index || t_index > paths.grid().n_steps() {
        return Err(WeightError::InvalidDates {
            s: s_index,
            t: t_index,
        });
    }
    Ok(())
}

pub fn compute_pi(
    paths: &AssetPaths,
    s_index: usize,
    t_index: usize,
) -> Result<PiVector, WeightError> {
    check_dates(paths, s_index, t_index)?;
    let d = paths.dim();
    let n = paths.n_paths();
    let s = paths.grid().date(s_index);
    let t = paths.grid().date(t_index);
    let fs = paths.fine_index(s_index);
    let ft = paths.fine_index(t_index);
    let mut values = vec![1.0; d * n];
    for f in 0..ft {
        let rho = paths.vol().rho(paths.fine_piece(f));
        let scale = if f < fs { 1.0 / s } else { -1.0 / (t - s) };
        for k in 0..d {
            let out = &mut values[k * n..(k + 1) * n];
            for j in k..d {
                let c = scale * rho[(j, k)];
                if c == 0.0 {
                    continue;
                }
                for (o, dw) in out.iter_mut().zip(paths.increment(f, j)) {
                    *o += c * dw;
                }
            }
        }
    }
    Ok(PiVector {
        dim: d,
        n_paths: n,
        values,
    })
}

/// `C_kl = sum_j int_0^t phi_jk phi_jl du`, exact on the piecewise-constant volatility.
pub fn compute_pi_covariance(vol: &TriangularVol, s: f64, t: f64) -> PiCovariance {
    assert!(s > 0.0 && t > s, "need 0 < s < t");
    let d = vol.dim();
    let mut m = DMatrix::zeros(d, d);
    for (a, b, scale) in [(0.0, s, 1.0 / (s * s)), (s, t, 1.0 / ((t - s) * (t - s)))] {
        for (u0, u1, p) in vol.segments(a, b) {
            let rho = vol.rho(p);
            m += rho.transpose() * rho * ((u1 - u0) * scale);
        }
    }
    PiCovariance { matrix: m }
}

/// Evaluation order for the memoized `Gamma` recursion, built once per covariance.
///
/// Subsets of `{0..d}` are bitmasks; `G(S) = pi_k G(S - k) - sum_{l in S, l > k} C_kl G(S - k - l)`
/// with `k = min S` and `G({}) = 1`. Only subsets reachable from the full set through
/// non-zero covariances are visited.
#[derive(Debug, Clone)]
pub struct GammaPlan {
    dim: usize,
    steps: Vec<GammaStep>,
}

#[derive(Debug, Clone)]
struct GammaStep {
    pivot: usize,
    without_pivot: usize,
    pairs: Vec<(f64, usize)>,
}

const EMPTY_SLOT: usize = usize::MAX;

impl GammaPlan {
    pub fn new(cov: &PiCovariance) -> Self {
        let d = cov.dim();
        assert!(
            d < usize::BITS as usize,
            "dimension too large for subset masks"
        );
        let full: u64 = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
        // Collect reachable masks.
        let mut reachable = vec![full];
        let mut seen: HashMap<u64, ()> = HashMap::new();
        seen.insert(full, ());
        let mut i = 0;
        while i < reachable.len() {
            let mask = reachable[i];
            i += 1;
            if mask == 0 {
                continue;
            }
            let k = mask.trailing_zeros() as usize;
            let rest = mask & !(1u64 << k);
            let mut next = vec![rest];
            for l in (k + 1)..d {
                if rest & (1u64 << l) != 0 && cov.get(k, l) != 0.0 {
                    next.push(rest & !(1u64 << l));
                }
            }
            for nm in next {
                if seen.insert(nm, ()).is_none() {
                    reachable.push(nm);
                }
            }
        }
        reachable.sort_by_key(|m| (m.count_ones(), *m));
        let slot: HashMap<u64, usize> =
            reachable.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let steps = reachable
            .iter()
            .map(|&mask| {
                if mask == 0 {
                    return GammaStep {
                        pivot: 0,
                        without_pivot: EMPTY_SLOT,
                        pairs: Vec::new(),
                    };
                }
                let k = mask.trailing_zeros() as usize;
                let rest = mask & !(1u64 << k);
                let pairs = ((k + 1)..d)
                    .filter(|&l| rest & (1u64 << l) != 0 && cov.get(k, l) != 0.0)
                    .map(|l| (cov.get(k, l), slot[&(rest & !(1u64 << l))]))
                    .collect();
                GammaStep {
                    pivot: k,
                    without_pivot: slot[&rest],
                    pairs,
                }
            })
            .collect();
        Self { dim: d, steps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Gamma` for one vector of `pi` values, using `scratch` as the memo table.
    pub fn eval_with(&self, pi: &[f64], scratch: &mut Vec<f64>) -> f64 {
        assert_eq!(pi.len(), self.dim);
        scratch.clear();
        scratch.resize(self.steps.len(), 0.0);
        for (i, st) in self.steps.iter().enumerate() {
            scratch[i] = if st.without_pivot == EMPTY_SLOT {
                1.0
            } else {
                let mut g = pi[st.pivot] * scratch[st.without_pivot];
                for &(c, j) in &st.pairs {
                    g -= c * scratch[j];
                }
                g
            };
        }
        *scratch.last().expect("non-empty plan")
    }

    pub fn eval(&self, pi: &[f64]) -> f64 {
        self.eval_with(pi, &mut Vec::new())
    }

    /// `Gamma` for every path.
    pub fn eval_paths(&self, pi: &PiVector) -> GammaWeight {
        let mut scratch = Vec::new();
        let mut row = vec![0.0; pi.dim];
        let values = (0..pi.n_paths)
            .map(|p| {
                for k in 0..pi.dim {
                    row[k] = pi.values[k * pi.n_paths + p];
                }
                self.eval_with(&row, &mut scratch)
            })
            .collect();
        GammaWeight { values }
    }
}

pub fn gamma_recursive(pi: &[f64], cov: &PiCovariance) -> Result<f64, WeightError> {
    if pi.len() != cov.dim() {
        return Err(WeightError::DimensionMismatch {
            expected: cov.dim(),
            got: pi.len(),
        });
    }
    Ok(GammaPlan::new(cov).eval(pi))
}

/// Direct signed sum over all involutions of `{0..d}`.
pub fn gamma_bruteforce(pi: &[f64], cov: &PiCovariance) -> Result<f64, WeightError> {
    let d = pi.len();
    if d != cov.dim() {
        return Err(WeightError::DimensionMismatch {
            expected: cov.dim(),
            got: d,
        });
    }
    if d > MAX_BRUTEFORCE_DIM {
        return Err(WeightError::DimensionTooLarge {
            dim: d,
            max: MAX_BRUTEFORCE_DIM,
        });
    }
    let entry = |i: usize, j: usize| -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => pi[i],
            std::cmp::Ordering::Less => cov.get(i, j),
            std::cmp::Ordering::Greater => 1.0,
        }
    };
    let mut total = 0.0;
    for p in (0..d).permutations(d) {
        if (0..d).any(|i| p[p[i]] != i) {
            continue;
        }
        let inversions = (0..d)
            .tuple_combinations()
            .filter(|&(i, j)| p[i] > p[j])
            .count();
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (0..d).map(|i| entry(i, p[i])).product::<f64>();
    }
    Ok(total)
}

/// Means of `g * 1{S_s >= x} * Gamma / prod S_s` and `1{S_s >= x} * Gamma / prod S_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioMeans {
    pub numerator: f64,
    pub denominator: f64,
}

impl RatioMeans {
    pub fn quotient(&self) -> f64 {
        self.numerator / self.denominator
    }
}

/// Per-path `Gamma / prod_k S_s^k`, the full Malliavin weight without the indicator.
pub fn path_weights(
    paths: &AssetPaths,
    s_index: usize,
    t_index: usize,
) -> Result<Vec<f64>, WeightError> {
    let pi = compute_pi(paths, s_index, t_index)?;
    let s = paths.grid().date(s_index);
    let t = paths.grid().date(t_index);
    let cov = compute_pi_covariance(paths.vol(), s, t);
    let gamma = GammaPlan::new(&cov).eval_paths(&pi);
    let n = paths.n_paths();
    let mut w = gamma.values;
    for k in 0..paths.dim() {
        for (v, sv) in w.iter_mut().zip(paths.s(s_index, k)) {
            *v /= sv;
        }
    }
    debug_assert_eq!(w.len(), n);
    Ok(w)
}

/// Unconditioned estimator of `E[g(S_t) | S_s = x]` as a numerator/denominator pair.
pub fn raw_continuation(
    paths: &AssetPaths,
    s_index: usize,
    t_index: usize,
    x: &[f64],
    values: &[f64],
) -> Result<RatioMeans, WeightError> {
    if x.len() != paths.dim() {
        return Err(WeightError::DimensionMismatch {
            expected: paths.dim(),
            got: x.len(),
        });
    }
    if values.len() != paths.n_paths() {
        return Err(WeightError::DimensionMismatch {
            expected: paths.n_paths(),
            got: values.len(),
        });
    }
    let w = path_weights(paths, s_index, t_index)?;
    let n = paths.n_paths() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut abs = 0.0;
    for (p, (&wp, &g)) in w.iter().zip(values).enumerate() {
        abs += wp.abs();
        if (0..paths.dim()).all(|k| paths.s(s_index, k)[p] >= x[k]) {
            num += g * wp;
            den += wp;
        }
    }
    let floor = DENOMINATOR_FLOOR * abs / n;
    let denominator = den / n;
    if !(denominator > floor) {
        return Err(WeightError::DegenerateDenominator {
            value: denominator,
            floor,
        });
    }
    Ok(RatioMeans {
        numerator: num / n,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{build_vol, TimeGrid, VolSpec};
    use approx::assert_abs_diff_eq;

    fn cov_from(rows: &[&[f64]]) -> PiCovariance {
        let d = rows.len();
        PiCovariance {
            matrix: DMatrix::from_fn(d, d, |i, j| rows[i][j]),
        }
    }

    #[test]
    fn pi_from_known_increments() {
        let vol = build_vol(1, &VolSpec::diagonal(0.2)).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths =
            AssetPaths::from_increments(&vol, &grid, &[100.0], 0.0, 0, 1, vec![0.1, 0.0]).unwrap();
        let pi = compute_pi(&paths, 1, 2).unwrap();
        assert_abs_diff_eq!(pi.values[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_conditioning_date_rejected() {
        let vol = build_vol(1, &VolSpec::diagonal(0.2)).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths =
            AssetPaths::from_increments(&vol, &grid, &[100.0], 0.0, 0, 1, vec![0.1, 0.0]).unwrap();
        assert_eq!(compute_pi(&paths, 0, 2), Err(WeightError::SIndexZero));
    }

    #[test]
    fn diagonal_covariance_closed_form() {
        let vol = build_vol(
            3,
            &VolSpec::Diagonal {
                sigma: vec![0.2, 0.3, 0.1],
            },
        )
        .unwrap();
        let c = compute_pi_covariance(&vol, 0.4, 1.0);
        for (k, sig) in [0.2f64, 0.3, 0.1].iter().enumerate() {
            let want = 1.0 / (sig * sig * 0.4) + 1.0 / (sig * sig * 0.6);
            assert_abs_diff_eq!(c.get(k, k), want, epsilon = 1e-9);
        }
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(2, 0), 0.0);
    }

    #[test]
    fn small_dimension_gamma_formulas() {
        let c1 = cov_from(&[&[3.0]]);
        assert_eq!(gamma_recursive(&[1.7], &c1).unwrap(), 1.7);
        let c2 = cov_from(&[&[1.0, 0.3], &[0.3, 2.0]]);
        let g2 = gamma_recursive(&[1.5, -0.5], &c2).unwrap();
        assert_abs_diff_eq!(g2, 1.5 * -0.5 - 0.3, epsilon = 1e-15);
        let c3 = cov_from(&[&[1.0, 0.2, 0.4], &[0.2, 1.0, 0.7], &[0.4, 0.7, 1.0]]);
        let p = [1.1, 0.9, -2.0];
        let want = p[0] * p[1] * p[2] - 0.2 * p[2] - 0.4 * p[1] - 0.7 * p[0];
        assert_abs_diff_eq!(gamma_recursive(&p, &c3).unwrap(), want, epsilon = 1e-14);
        assert_abs_diff_eq!(gamma_bruteforce(&p, &c3).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn bruteforce_dimension_limit() {
        let c = PiCovariance {
            matrix: DMatrix::identity(9, 9),
        };
        assert!(matches!(
            gamma_bruteforce(&[1.0; 9], &c),
            Err(WeightError::DimensionTooLarge { dim: 9, .. })
        ));
        assert!(gamma_recursive(&[1.0; 9], &c).is_ok());
    }

    #[test]
    fn diagonal_plan_visits_only_suffixes() {
        let c = PiCovariance {
            matrix: DMatrix::identity(10, 10),
        };
        let plan = GammaPlan::new(&c);
        assert_eq!(plan.steps.len(), 11);
        let pi: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 0.1).collect();
        assert_abs_diff_eq!(plan.eval(&pi), pi.iter().product::<f64>(), epsilon = 1e-14);
    }

    #[test]
    fn constant_payoff_gives_equal_means() {
        let vol = build_vol(2, &VolSpec::diagonal(0.2)).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths =
            crate::market::simulate_paths(&vol, &grid, &[100.0, 100.0], 0.05, 4096, 11).unwrap();
        let ones = vec![1.0; 4096];
        let r = raw_continuation(&paths, 1, 2, &[90.0, 90.0], &ones).unwrap();
        assert_eq!(r.numerator, r.denominator);
    }
}
