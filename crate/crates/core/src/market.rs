//! Time grids, deterministic lower-triangular volatility and exact log-space
//! simulation of the multi-dimensional exponential diffusion
//!
//! ```text
//! dS^i_t / S^i_t = r dt + sum_j sigma_ij(t) dW^j_t
//! ```
//!
//! Volatility is piecewise constant in time. Paths are simulated on the union
//! of the exercise grid and the volatility breakpoints, so every stochastic
//! integral of a deterministic piecewise-constant integrand is an exact finite
//! sum of Brownian increments.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default lower bound on `|sigma_ii(t)|`.
pub const DEFAULT_ELLIPTICITY: f64 = 1e-8;

const INVERSE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("volatility matrix is not lower triangular: entry ({row}, {col}) = {value}")]
    NotTriangular { row: usize, col: usize, value: f64 },
    #[error("volatility is not uniformly elliptic: |sigma[{index}][{index}]| = {value} < {bound}")]
    NotElliptic {
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("volatility matrix on piece {piece} could not be inverted")]
    Singular { piece: usize },
    #[error("invalid volatility specification: {0}")]
    InvalidVolSpec(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid simulation argument: {0}")]
    InvalidArgument(String),
}

/// Exercise dates `t_k = k T / n` for `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    maturity: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(maturity: f64, n_steps: usize) -> Result<Self, MarketError> {
        if !(maturity.is_finite() && maturity > 0.0) {
            return Err(MarketError::InvalidGrid(format!(
                "maturity must be positive and finite, got {maturity}"
            )));
        }
        if n_steps == 0 {
            return Err(MarketError::InvalidGrid(
                "n_steps must be at least 1".into(),
            ));
        }
        Ok(Self { maturity, n_steps })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }

    /// Date `t_k`; the last date is exactly the maturity.
    pub fn date(&self, k: usize) -> f64 {
        assert!(k <= self.n_steps, "date index {k} out of range");
        if k == self.n_steps {
            self.maturity
        } else {
            k as f64 * self.maturity / self.n_steps as f64
        }
    }

    pub fn dates(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.date(k)).collect()
    }
}

/// User-facing volatility description, as read from run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolSpec {
    /// Constant diagonal volatility. A single entry is broadcast to every asset.
    Diagonal { sigma: Vec<f64> },
    /// Constant lower-triangular matrix.
    Constant { matrix: Vec<Vec<f64>> },
    /// Piecewise-constant matrices: `matrices[i]` applies on `[breaks[i-1], breaks[i])`
    /// with `breaks[-1] = 0`; the last matrix extends to infinity.
    Piecewise {
        breaks: Vec<f64>,
        matrices: Vec<Vec<Vec<f64>>>,
    },
}

impl VolSpec {
    pub fn diagonal(sigma: f64) -> Self {
        VolSpec::Diagonal { sigma: vec![sigma] }
    }
}

/// Piecewise-constant lower-triangular volatility with precomputed inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularVol {
    dim: usize,
    /// Interior change times, strictly increasing and positive.
    breaks: Vec<f64>,
    sigma: Vec<DMatrix<f64>>,
    rho: Vec<DMatrix<f64>>,
}

/// Parses and validates a volatility specification.
pub fn build_vol(dim: usize, spec: &VolSpec) -> Result<TriangularVol, MarketError> {
    build_vol_with(dim, spec, DEFAULT_ELLIPTICITY)
}

pub fn build_vol_with(
    dim: usize,
    spec: &VolSpec,
    ellipticity: f64,
) -> Result<TriangularVol, MarketError> {
    if dim == 0 {
        return Err(MarketError::InvalidVolSpec(
            "dimension must be at least 1".into(),
        ));
    }
    let (breaks, raw) = match spec {
        VolSpec::Diagonal { sigma } => {
            let diag: Vec<f64> = match sigma.len() {
                1 => vec![sigma[0]; dim],
                n if n == dim => sigma.clone(),
                n => {
                    return Err(MarketError::InvalidVolSpec(format!(
                        "diagonal has {n} entries, expected 1 or {dim}"
                    )))
                }
            };
            let mut m = vec![vec![0.0; dim]; dim];
            for (i, s) in diag.into_iter().enumerate() {
                m[i][i] = s;
            }
            (Vec::new(), vec![m])
        }
        VolSpec::Constant { matrix } => (Vec::new(), vec![matrix.clone()]),
        VolSpec::Piecewise { breaks, matrices } => {
            if matrices.len() != breaks.len() + 1 {
                return Err(MarketError::InvalidVolSpec(format!(
                    "{} breaks need {} matrices, got {}",
                    breaks.len(),
                    breaks.len() + 1,
                    matrices.len()
                )));
            }
            let mut prev = 0.0;
            for &b in breaks {
                if !(b.is_finite() && b > prev) {
                    return Err(MarketError::InvalidVolSpec(format!(
                        "breaks must be positive and strictly increasing, got {breaks:?}"
                    )));
                }
                prev = b;
            }
            (breaks.clone(), matrices.clone())
        }
    };

    let mut sigma = Vec::with_capacity(raw.len());
    let mut rho = Vec::with_capacity(raw.len());
    for (piece, rows) in raw.iter().enumerate() {
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(MarketError::InvalidVolSpec(format!(
                "matrix on piece {piece} is not {dim}x{dim}"
            )));
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MarketError::InvalidVolSpec(format!(
                "matrix on piece {piece} has non-finite entries"
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if m[(i, j)] != 0.0 {
                    return Err(MarketError::NotTriangular {
                        row: i,
                        col: j,
                        value: m[(i, j)],
                    });
                }
            }
            if m[(i, i)].abs() < ellipticity {
                return Err(MarketError::NotElliptic {
                    index: i,
                    value: m[(i, i)].abs(),
                    bound: ellipticity,
                });
            }
        }
        let inv = lower_triangular_inverse(&m).ok_or(MarketError::Singular { piece })?;
        let residual = (&inv * &m - DMatrix::identity(dim, dim)).amax();
        if !(residual <= INVERSE_TOLERANCE) {
            return Err(MarketError::Singular { piece });
        }
        sigma.push(m);
        rho.push(inv);
    }
    Ok(TriangularVol {
        dim,
        breaks,
        sigma,
        rho,
    })
}

/// Forward substitution on the columns of the identity.
fn lower_triangular_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                acc -= m[(i, k)] * inv[(k, col)];
            }
            let v = acc / m[(i, i)];
            if !v.is_finite() {
                return None;
            }
            inv[(i, col)] = v;
        }
    }
    Some(inv)
}

impl TriangularVol {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn n_pieces(&self) -> usize {
        self.sigma.len()
    }

    /// Index of the piece active on `[u, u + du)`.
    pub fn piece_at(&self, u: f64) -> usize {
        self.breaks.partition_point(|&b| b <= u)
    }

    pub fn sigma(&self, piece: usize) -> &DMatrix<f64> {
        &self.sigma[piece]
    }

    pub fn rho(&self, piece: usize) -> &DMatrix<f64> {
        &self.rho[piece]
    }

    pub fn sigma_at(&self, u: f64) -> &DMatrix<f64> {
        &self.sigma[self.piece_at(u)]
    }

    pub fn rho_at(&self, u: f64) -> &DMatrix<f64> {
        &self.rho[self.piece_at(u)]
    }

    pub fn is_diagonal(&self) -> bool {
        self.sigma
            .iter()
            .all(|m| (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || m[(i, j)] == 0.0)))
    }

    pub fn is_constant(&self) -> bool {
        self.sigma.windows(2).all(|w| w[0] == w[1])
    }

    /// Per-asset constant volatilities when the matrix is diagonal and constant.
    pub fn constant_diagonal(&self) -> Option<Vec<f64>> {
        if self.is_diagonal() && self.is_constant() {
            Some((0..self.dim).map(|i| self.sigma[0][(i, i)]).collect())
        } else {
            None
        }
    }

    /// Splits `[a, b)` at the volatility breakpoints: `(start, end, piece)`.
    pub fn segments(&self, a: f64, b: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        if b <= a {
            return out;
        }
        let mut start = a;
        for &brk in self.breaks.iter().filter(|&&x| x > a && x < b) {
            out.push((start, brk, self.piece_at(start)));
            start = brk;
        }
        out.push((start, b, self.piece_at(start)));
        out
    }

    /// `int_a^b sum_j sigma_ij(u)^2 du`, the log-variance accumulated by asset `i`.
    pub fn integrated_variance(&self, i: usize, a: f64, b: f64) -> f64 {
        self.segments(a, b)
            .into_iter()
            .map(|(u0, u1, p)| {
                let row = self.sigma[p].row(i);
                row.iter().map(|v| v * v).sum::<f64>() * (u1 - u0)
            })
            .sum()
    }
}

/// Identifies the independent random substream used for one `(path, interval)` cell.
///
/// Draws depend only on the triple, never on which worker consumes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
    pub substream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64, substream: u64) -> Self {
        Self {
            seed,
            stream,
            substream,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        // 2^40 words per substream is far beyond what a single cell consumes.
        rng.set_word_pos(u128::from(self.substream) << 40);
        rng
    }
}

/// Source of Brownian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Noise {
    #[default]
    Gaussian,
    /// All increments are zero; paths follow the deterministic drift.
    Zero,
}

/// Simulated Brownian motion and asset values for a population of paths.
///
/// Storage is column-major per `(date, component)` so that a slice over all
/// paths is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPaths {
    seed: u64,
    n_paths: usize,
    dim: usize,
    grid: TimeGrid,
    vol: TriangularVol,
    s0: Vec<f64>,
    rate: f64,
    fine_times: Vec<f64>,
    fine_pieces: Vec<usize>,
    date_to_fine: Vec<usize>,
    increments: Vec<f64>,
    w: Vec<f64>,
    s: Vec<f64>,
}

/// Simulates paths with Gaussian increments.
pub fn simulate_paths(
    vol: &TriangularVol,
    grid: &TimeGrid,
    s0: &[f64],
    rate: f64,
    n_paths: usize,
    seed: u64,
) -> Result<AssetPaths, MarketError> {
    simulate_paths_with(vol, grid, s0, rate, n_paths, seed, Noise::Gaussian)
}

pub fn simulate_paths_with(
    vol: &TriangularVol,
    grid: &TimeGrid,
    s0: &[f64],
    rate: f64,
    n_paths: usize,
    seed: u64,
    noise: Noise,
) -> Result<AssetPaths, MarketError> {
    let dim = vol.dim();
    if s0.len() != dim {
        return Err(MarketError::InvalidArgument(format!(
            "S0 has {} components, volatility has dimension {dim}",
            s0.len()
        )));
    }
    if let Some(bad) = s0.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(MarketError::InvalidArgument(format!(
            "S0 components must be positive, got {bad}"
        )));
    }
    if !rate.is_finite() {
        return Err(MarketError::InvalidArgument("rate must be finite".into()));
    }
    if n_paths == 0 {
        return Err(MarketError::InvalidArgument(
            "n_paths must be at least 1".into(),
        ));
    }

    let fine_times = simulation_times(vol, grid);
    let n_fine = fine_times.len() - 1;
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; n_fine * dim];
            if noise == Noise::Gaussian {
                for f in 0..n_fine {
                    let sd = (fine_times[f + 1] - fine_times[f]).sqrt();
                    let mut rng = RngStream::new(seed, p as u64, f as u64).rng();
                    for j in 0..dim {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        out[f * dim + j] = sd * z;
                    }
                }
            }
            out
        })
        .collect();
    let mut increments = vec![0.0; n_fine * dim * n_paths];
    for (p, incs) in per_path.iter().enumerate() {
        for (cell, v) in incs.iter().enumerate() {
            increments[cell * n_paths + p] = *v;
        }
    }
    drop(per_path);
    AssetPaths::from_increments(vol, grid, s0, rate, seed, n_paths, increments)
}

/// Simulation grid: exercise dates merged with volatility breaks before maturity.
pub fn simulation_times(vol: &TriangularVol, grid: &TimeGrid) -> Vec<f64> {
    let mut fine_times: Vec<f64> = grid.dates();
    fine_times.extend(
        vol.breaks()
            .iter()
            .copied()
            .filter(|&b| b < grid.maturity()),
    );
    fine_times.sort_by(f64::total_cmp);
    fine_times.dedup();
    fine_times
}

impl AssetPaths {
    /// Builds paths from given Brownian increments.
    ///
    /// `increments[(interval * dim + j) * n_paths + path]` is the increment of `W^j`
    /// over interval `interval` of [`simulation_times`].
    pub fn from_increments(
        vol: &TriangularVol,
        grid: &TimeGrid,
        s0: &[f64],
        rate: f64,
        seed: u64,
        n_paths: usize,
        increments: Vec<f64>,
    ) -> Result<Self, MarketError> {
        let dim = vol.dim();
        if s0.len() != dim || n_paths == 0 {
            return Err(MarketError::InvalidArgument(
                "inconsistent path dimensions".into(),
            ));
        }
        let dates = grid.dates();
        let fine_times = simulation_times(vol, grid);
        let n_fine = fine_times.len() - 1;
        if increments.len() != n_fine * dim * n_paths {
            return Err(MarketError::InvalidArgument(format!(
                "expected {} increments, got {}",
                n_fine * dim * n_paths,
                increments.len()
            )));
        }
        let date_to_fine: Vec<usize> = dates
            .iter()
            .map(|d| {
                fine_times
                    .iter()
                    .position(|f| f == d)
                    .expect("date on fine grid")
            })
            .collect();
        let fine_pieces: Vec<usize> = (0..n_fine).map(|f| vol.piece_at(fine_times[f])).collect();

        // Per-interval drift of log S and volatility rows.
        let log_drift: Vec<Vec<f64>> = (0..n_fine)
            .map(|f| {
                let dt = fine_times[f + 1] - fine_times[f];
                let sig = vol.sigma(fine_pieces[f]);
                (0..dim)
                    .map(|i| {
                        let var: f64 = (0..=i).map(|j| sig[(i, j)] * sig[(i, j)]).sum();
                        (rate - 0.5 * var) * dt
                    })
                    .collect()
            })
            .collect();

        let n_dates = dates.len();
        let mut w = vec![0.0; n_dates * dim * n_paths];
        let mut s = vec![0.0; n_dates * dim * n_paths];
        let mut w_run = vec![0.0; dim * n_paths];
        let mut log_s: Vec<f64> = (0..dim)
            .flat_map(|i| std::iter::repeat(s0[i].ln()).take(n_paths))
            .collect();
        for i in 0..dim {
            s[i * n_paths..(i + 1) * n_paths].fill(s0[i]);
        }
        let mut next_date = 1;
        for f in 0..n_fine {
            let sig = vol.sigma(fine_pieces[f]);
            for i in 0..dim {
                let ls = &mut log_s[i * n_paths..(i + 1) * n_paths];
                let drift = log_drift[f][i];
                for v in ls.iter_mut() {
                    *v += drift;
                }
                for j in 0..=i {
                    let c = sig[(i, j)];
                    if c == 0.0 {
                        continue;
                    }
                    let inc = &increments[(f * dim + j) * n_paths..(f * dim + j + 1) * n_paths];
                    for (v, dw) in ls.iter_mut().zip(inc) {
                        *v += c * dw;
                    }
                }
            }
            for j in 0..dim {
                let inc = &increments[(f * dim + j) * n_paths..(f * dim + j + 1) * n_paths];
                for (v, dw) in w_run[j * n_paths..(j + 1) * n_paths].iter_mut().zip(inc) {
                    *v += dw;
                }
            }
            if next_date < n_dates && date_to_fine[next_date] == f + 1 {
                let k = next_date;
                w[k * dim * n_paths..(k + 1) * dim * n_paths].copy_from_slice(&w_run);
                for (dst, src) in s[k * dim * n_paths..(k + 1) * dim * n_paths]
                    .iter_mut()
                    .zip(&log_s)
                {
                    *dst = src.exp();
                }
                next_date += 1;
            }
        }

        Ok(AssetPaths {
            seed,
            n_paths,
            dim,
            grid: *grid,
            vol: vol.clone(),
            s0: s0.to_vec(),
            rate,
            fine_times,
            fine_pieces,
            date_to_fine,
            increments,
            w,
            s,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn vol(&self) -> &TriangularVol {
        &self.vol
    }

    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Times of the simulation grid (exercise dates plus volatility breaks).
    pub fn fine_times(&self) -> &[f64] {
        &self.fine_times
    }

    pub fn fine_piece(&self, interval: usize) -> usize {
        self.fine_pieces[interval]
    }

    /// Index on the simulation grid of exercise date `k`.
    pub fn fine_index(&self, date: usize) -> usize {
        self.date_to_fine[date]
    }

    /// Brownian increments of component `j` over simulation interval `interval`.
    pub fn increment(&self, interval: usize, j: usize) -> &[f64] {
        let start = (interval * self.dim + j) * self.n_paths;
        &self.increments[start..start + self.n_paths]
    }

    /// `W^j` at exercise date `date`, across paths.
    pub fn w(&self, date: usize, j: usize) -> &[f64] {
        let start = (date * self.dim + j) * self.n_paths;
        &self.w[start..start + self.n_paths]
    }

    /// `S^i` at exercise date `date`, across paths.
    pub fn s(&self, date: usize, i: usize) -> &[f64] {
        let start = (date * self.dim + i) * self.n_paths;
        &self.s[start..start + self.n_paths]
    }

    /// Asset vector of one path at one date.
    pub fn s_vector(&self, date: usize, path: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.s(date, i)[path]).collect()
    }

    /// `Y_ij = int_0^{t_date} sigma_ij(u) dW^j_u` across paths.
    pub fn y_integral(&self, date: usize, i: usize, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_paths];
        if j > i {
            return out;
        }
        for f in 0..self.date_to_fine[date] {
            let c = self.vol.sigma(self.fine_pieces[f])[(i, j)];
            if c == 0.0 {
                continue;
            }
            for (o, dw) in out.iter_mut().zip(self.increment(f, j)) {
                *o += c * dw;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_dates_hit_maturity_exactly() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let d = g.dates();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[3], 1.0);
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 2).is_err());
    }

    #[test]
    fn scalar_inverse() {
        let v = build_vol(1, &VolSpec::diagonal(0.2)).unwrap();
        assert_abs_diff_eq!(v.rho(0)[(0, 0)], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_triangular_inverse() {
        let spec = VolSpec::Constant {
            matrix: vec![vec![0.2, 0.0], vec![0.1, 0.2]],
        };
        let v = build_vol(2, &spec).unwrap();
        let rho = v.rho(0);
        assert_abs_diff_eq!(rho[(0, 0)], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rho[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rho[(1, 0)], -2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho[(1, 1)], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_diagonal_is_not_elliptic() {
        let spec = VolSpec::Constant {
            matrix: vec![vec![0.2, 0.0], vec![0.1, 0.0]],
        };
        assert!(matches!(
            build_vol(2, &spec),
            Err(MarketError::NotElliptic { index: 1, .. })
        ));
    }

    #[test]
    fn upper_entries_rejected() {
        let spec = VolSpec::Constant {
            matrix: vec![vec![0.2, 0.05], vec![0.1, 0.2]],
        };
        assert!(matches!(
            build_vol(2, &spec),
            Err(MarketError::NotTriangular { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn piecewise_lookup_and_segments() {
        let spec = VolSpec::Piecewise {
            breaks: vec![0.25, 0.6],
            matrices: vec![vec![vec![0.1]], vec![vec![0.2]], vec![vec![0.3]]],
        };
        let v = build_vol(1, &spec).unwrap();
        assert_eq!(v.piece_at(0.0), 0);
        assert_eq!(v.piece_at(0.25), 1);
        assert_eq!(v.piece_at(0.7), 2);
        let seg = v.segments(0.1, 0.7);
        assert_eq!(seg, vec![(0.1, 0.25, 0), (0.25, 0.6, 1), (0.6, 0.7, 2)]);
        let iv = v.integrated_variance(0, 0.0, 1.0);
        assert_abs_diff_eq!(iv, 0.01 * 0.25 + 0.04 * 0.35 + 0.09 * 0.4, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_drift_with_zero_noise() {
        let vol = build_vol(1, &VolSpec::diagonal(0.2)).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let r = 1.1f64.ln();
        let p = simulate_paths_with(&vol, &grid, &[100.0], r, 3, 7, Noise::Zero).unwrap();
        let expected = 100.0 * ((r - 0.02) * 1.0).exp();
        for v in p.s(4, 0) {
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(expected, 107.8219, epsilon = 1e-4);
    }

    #[test]
    fn fine_grid_contains_breaks() {
        let spec = VolSpec::Piecewise {
            breaks: vec![0.3],
            matrices: vec![vec![vec![0.1]], vec![vec![0.2]]],
        };
        let vol = build_vol(1, &spec).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let p = simulate_paths(&vol, &grid, &[100.0], 0.0, 4, 1).unwrap();
        assert_eq!(p.fine_times(), &[0.0, 0.3, 0.5, 1.0]);
        assert_eq!(p.fine_index(1), 2);
        let w1: Vec<f64> = (0..4)
            .map(|q| p.increment(0, 0)[q] + p.increment(1, 0)[q])
            .collect();
        for (a, b) in w1.iter().zip(p.w(1, 0)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn exact_log_increment() {
        let spec = VolSpec::Constant {
            matrix: vec![vec![0.2, 0.0], vec![0.1, 0.3]],
        };
        let vol = build_vol(2, &spec).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let r = 0.05;
        let p = simulate_paths(&vol, &grid, &[100.0, 50.0], r, 5, 3).unwrap();
        for path in 0..5 {
            let dw0 = p.w(2, 0)[path] - p.w(1, 0)[path];
            let dw1 = p.w(2, 1)[path] - p.w(1, 1)[path];
            let lhs = (p.s(2, 1)[path] / p.s(1, 1)[path]).ln();
            let rhs = (r - 0.5 * (0.01 + 0.09)) * 0.5 + 0.1 * dw0 + 0.3 * dw1;
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn rng_stream_is_order_independent() {
        use rand::RngCore;
        let a = RngStream::new(9, 4, 2).rng().next_u64();
        let _ = RngStream::new(9, 4, 1).rng().next_u64();
        let b = RngStream::new(9, 4, 2).rng().next_u64();
        assert_eq!(a, b);
        assert_ne!(a, RngStream::new(9, 5, 2).rng().next_u64());
        assert_ne!(a, RngStream::new(9, 4, 3).rng().next_u64());
    }
}
