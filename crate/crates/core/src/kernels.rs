//! Conditional kernels obtained by integrating the Malliavin weight against
//! the terminal Gaussian integrals.
//!
//! With diagonal constant volatility, asset `k` only depends on `W^k` and
//!
//! ```text
//! h_k(x, w) = E[ 1{S_s^k >= x_k} W^k_{s,t} / S_s^k | W^k_t = w ]
//! D_k(x)    = E[ 1{S_s^k >= x_k} W^k_{s,t} / S_s^k ]
//! W^k_{s,t} = (t - s)(W^k_s + sigma_k s) - s (W^k_t - W^k_s)
//! ```
//!
//! are Gaussian integrals in closed form. `log h_k` is a quadratic in `w`,
//! which the pricer exploits: `log h_k = c_k(x) + a_k(x) w + v_k(w)`.
//!
//! For general triangular volatility only the regression blocks are exact;
//! [`kernel_h_numeric`] integrates over the residual Gaussian law by Monte Carlo.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::market::{AssetPaths, RngStream, TriangularVol};
use crate::weights::{self, compute_pi_covariance, GammaPlan, RatioMeans, WeightError};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("closed-form kernels need diagonal constant volatility")]
    NotDiagonal,
    #[error("dates must satisfy 0 < s < t, got s = {s}, t = {t}")]
    InvalidDates { s: f64, t: f64 },
    #[error("volatility Gram matrix of column {0} is singular")]
    GramSingular(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Closed-form ingredients for diagonal constant volatility between dates `s < t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalKernelParams {
    pub sigma: Vec<f64>,
    pub s0: Vec<f64>,
    pub rate: f64,
    pub s: f64,
    pub t: f64,
}

impl DiagonalKernelParams {
    pub fn new(
        sigma: Vec<f64>,
        s0: Vec<f64>,
        rate: f64,
        s: f64,
        t: f64,
    ) -> Result<Self, KernelError> {
        if !(s > 0.0 && t > s && t.is_finite()) {
            return Err(KernelError::InvalidDates { s, t });
        }
        if sigma.len() != s0.len() {
            return Err(KernelError::DimensionMismatch {
                expected: sigma.len(),
                got: s0.len(),
            });
        }
        Ok(Self {
            sigma,
            s0,
            rate,
            s,
            t,
        })
    }

    pub fn from_vol(
        vol: &TriangularVol,
        s0: &[f64],
        rate: f64,
        s: f64,
        t: f64,
    ) -> Result<Self, KernelError> {
        let sigma = vol.constant_diagonal().ok_or(KernelError::NotDiagonal)?;
        Self::new(sigma, s0.to_vec(), rate, s, t)
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// `m_k = sigma_k sqrt(s (t - s) / t)`.
    pub fn m(&self, k: usize) -> f64 {
        self.sigma[k] * self.bridge_var().sqrt()
    }

    /// Variance of `W_s` given `W_t`.
    fn bridge_var(&self) -> f64 {
        self.s * (self.t - self.s) / self.t
    }

    /// Threshold on the standard normal driving `S_s^k`: `S_s^k >= x_k` iff `G >= beta_k / sqrt(s)`.
    pub fn beta(&self, k: usize, x: f64) -> f64 {
        let sig = self.sigma[k];
        ((x / self.s0[k]).ln() - self.rate * self.s + 0.5 * sig * sig * self.s) / sig
    }

    pub fn d1(&self, k: usize, x: f64) -> f64 {
        (self.beta(k, x) + self.sigma[k] * self.s) / self.s.sqrt()
    }

    pub fn d2(&self, k: usize, x: f64, w: f64) -> f64 {
        (self.beta(k, x) - self.s * w / self.t) / self.bridge_var().sqrt()
    }

    fn drift_log(&self, k: usize) -> f64 {
        let sig = self.sigma[k];
        -(self.rate - 0.5 * sig * sig) * self.s
    }

    /// `log D_k(x)`.
    pub fn log_denominator_k(&self, k: usize, x: f64) -> f64 {
        let sig = self.sigma[k];
        let d1 = self.d1(k, x);
        ((self.t - self.s) * self.s.sqrt() / self.s0[k]).ln()
            + self.drift_log(k)
            + 0.5 * sig * sig * self.s
            - 0.5 * d1 * d1
            - LN_SQRT_2PI
    }

    /// `(c_k, a_k)` with `log h_k(x, w) = c_k + a_k w + v_k(w)`.
    pub fn log_kernel_coefficients(&self, k: usize, x: f64) -> (f64, f64) {
        let sig = self.sigma[k];
        let m2 = self.bridge_var();
        let b = self.beta(k, x) + sig * m2;
        let lead =
            (self.t * m2.sqrt() / self.s0[k]).ln() + self.drift_log(k) + 0.5 * sig * sig * m2
                - LN_SQRT_2PI;
        (lead - b * b / (2.0 * m2), b / (self.t - self.s))
    }

    /// The `x`-free part of `log h_k`.
    pub fn log_kernel_tail(&self, k: usize, w: f64) -> f64 {
        let (s, t) = (self.s, self.t);
        -self.sigma[k] * s * w / t - s * w * w / (2.0 * t * (t - s))
    }

    pub fn log_kernel_k(&self, k: usize, x: f64, w: f64) -> f64 {
        let (c, a) = self.log_kernel_coefficients(k, x);
        c + a * w + self.log_kernel_tail(k, w)
    }

    /// Largest value of `a_k w + v_k(w)` over `w`.
    pub fn log_kernel_peak(&self, k: usize, a: f64) -> f64 {
        let (s, t) = (self.s, self.t);
        let curvature = s / (2.0 * t * (t - s));
        let slope = a - self.sigma[k] * s / t;
        slope * slope / (4.0 * curvature)
    }

    /// `log E[h_k(x, W_t)^2]`.
    pub fn log_second_moment_k(&self, k: usize, x: f64) -> f64 {
        let (c, a) = self.log_kernel_coefficients(k, x);
        let (s, t) = (self.s, self.t);
        let q = (t + s) / (t - s);
        let lin = 2.0 * a - 2.0 * self.sigma[k] * s / t;
        2.0 * c - 0.5 * q.ln() + lin * lin * t / (2.0 * q)
    }

    /// Probability that `S_s^k >= x`.
    pub fn exceedance(&self, k: usize, x: f64) -> f64 {
        0.5 * erfc(self.beta(k, x) / self.s.sqrt() / std::f64::consts::SQRT_2)
    }

    /// Normalization of the raw Malliavin weight: `pi^k = W^k_{s,t} / (sigma_k s (t - s))`.
    pub fn raw_scale(&self) -> f64 {
        self.sigma
            .iter()
            .map(|sig| sig * self.s * (self.t - self.s))
            .product()
    }
}

fn check_len(params: &DiagonalKernelParams, v: &[f64]) -> Result<(), KernelError> {
    if v.len() != params.dim() {
        return Err(KernelError::DimensionMismatch {
            expected: params.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// `prod_k D_k(x_k)`. The initial spot is part of `params`.
pub fn denominator_closed_form(
    params: &DiagonalKernelParams,
    x: &[f64],
) -> Result<f64, KernelError> {
    check_len(params, x)?;
    Ok((0..params.dim())
        .map(|k| params.log_denominator_k(k, x[k]))
        .sum::<f64>()
        .exp())
}

/// `prod_k h_k(x_k, w_k)`.
pub fn kernel_h(params: &DiagonalKernelParams, x: &[f64], w: &[f64]) -> Result<f64, KernelError> {
    check_len(params, x)?;
    check_len(params, w)?;
    Ok((0..params.dim())
        .map(|k| params.log_kernel_k(k, x[k], w[k]))
        .sum::<f64>()
        .exp())
}

/// `E[(prod_k h_k)^2]`.
pub fn kernel_second_moment(params: &DiagonalKernelParams, x: &[f64]) -> Result<f64, KernelError> {
    check_len(params, x)?;
    Ok((0..params.dim())
        .map(|k| params.log_second_moment_k(k, x[k]))
        .sum::<f64>()
        .exp())
}

/// How the denominator of a conditioned continuation is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenominatorSource {
    ClosedForm,
    Simulated,
}

/// Conditioned estimator of `E[g(S_t) | S_s = x]`.
///
/// The numerator is the mean of `g * prod_k h_k(W_t^k)`. With non-diagonal volatility
/// a simulated denominator falls back to [`weights::raw_continuation`].
pub fn conditioned_continuation(
    paths: &AssetPaths,
    s_index: usize,
    t_index: usize,
    x: &[f64],
    values: &[f64],
    source: DenominatorSource,
) -> Result<RatioMeans, KernelError> {
    if values.len() != paths.n_paths() {
        return Err(KernelError::DimensionMismatch {
            expected: paths.n_paths(),
            got: values.len(),
        });
    }
    if s_index == 0 {
        return Err(WeightError::SIndexZero.into());
    }
    if t_index <= s_index || t_index > paths.grid().n_steps() {
        return Err(WeightError::InvalidDates {
            s: s_index,
            t: t_index,
        }
        .into());
    }
    let s = paths.grid().date(s_index);
    let t = paths.grid().date(t_index);
    let params = match DiagonalKernelParams::from_vol(paths.vol(), paths.s0(), paths.rate(), s, t) {
        Ok(p) => p,
        Err(KernelError::NotDiagonal) if source == DenominatorSource::Simulated => {
            return Ok(weights::raw_continuation(
                paths, s_index, t_index, x, values,
            )?);
        }
        Err(e) => return Err(e),
    };
    check_len(&params, x)?;
    let n = paths.n_paths();
    let coef: Vec<(f64, f64)> = (0..params.dim())
        .map(|k| params.log_kernel_coefficients(k, x[k]))
        .collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..n {
        let mut lg = 0.0;
        for (k, &(c, a)) in coef.iter().enumerate() {
            let w = paths.w(t_index, k)[p];
            lg += c + a * w + params.log_kernel_tail(k, w);
        }
        let h = lg.exp();
        num += values[p] * h;
        den += h;
    }
    let denominator = match source {
        DenominatorSource::ClosedForm => denominator_closed_form(&params, x)?,
        DenominatorSource::Simulated => den / n as f64,
    };
    Ok(RatioMeans {
        numerator: num / n as f64,
        denominator,
    })
}

/// Regression of the weight integrals and of the `S_s` integrals on the
/// terminal integrals `Y_ij = int_0^t sigma_ij dW^j`, one block per Brownian column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBlocks {
    pub column: usize,
    /// Assets `i >= j` with a non-vanishing `Y_ij`.
    pub y_rows: Vec<usize>,
    /// Indices `k <= j` with a non-vanishing `int phi_jk dW^j`.
    pub x_cols: Vec<usize>,
    pub sigma_t: DMatrix<f64>,
    pub sigma_s: DMatrix<f64>,
    pub psi_t: DMatrix<f64>,
    /// `Cov(X_jk, Z_ij)` before regression, rows `k`, columns `i`.
    pub psi_s: DMatrix<f64>,
    pub phi_t: DMatrix<f64>,
    /// `X = A' Y + residual`.
    pub a: DMatrix<f64>,
    /// `Z = B' Y + residual`.
    pub b: DMatrix<f64>,
    pub cov_x: DMatrix<f64>,
    pub cov_z: DMatrix<f64>,
    pub cov_xz: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBlocks {
    pub s: f64,
    pub t: f64,
    pub columns: Vec<ColumnBlocks>,
}

/// `int_a^b f(u) g(u) du` for piecewise-constant integrands given per piece.
fn integrate(vol: &TriangularVol, a: f64, b: f64, f: impl Fn(usize) -> f64) -> f64 {
    vol.segments(a, b)
        .into_iter()
        .map(|(u0, u1, p)| f(p) * (u1 - u0))
        .sum()
}

fn phi(vol: &TriangularVol, piece: usize, j: usize, k: usize, first: bool, s: f64, t: f64) -> f64 {
    let r = vol.rho(piece)[(j, k)];
    if first {
        r / s
    } else {
        -r / (t - s)
    }
}

fn inner(
    vol: &TriangularVol,
    s: f64,
    t: f64,
    a: impl Fn(usize, bool) -> f64,
    b: impl Fn(usize, bool) -> f64,
) -> f64 {
    integrate(vol, 0.0, s, |p| a(p, true) * b(p, true))
        + integrate(vol, s, t, |p| a(p, false) * b(p, false))
}

const GRAM_RCOND: f64 = 1e-12;

pub fn regression_blocks(
    vol: &TriangularVol,
    s: f64,
    t: f64,
) -> Result<RegressionBlocks, KernelError> {
    if !(s > 0.0 && t > s) {
        return Err(KernelError::InvalidDates { s, t });
    }
    let d = vol.dim();
    let mut columns = Vec::with_capacity(d);
    for j in 0..d {
        let sig = |i: usize| move |p: usize, _first: bool| vol.sigma(p)[(i, j)];
        let ph = |k: usize| move |p: usize, first: bool| phi(vol, p, j, k, first, s, t);
        let sig_s =
            |i: usize| move |p: usize, first: bool| if first { vol.sigma(p)[(i, j)] } else { 0.0 };

        let y_rows: Vec<usize> = (j..d)
            .filter(|&i| inner(vol, s, t, sig(i), sig(i)) > 0.0)
            .collect();
        let x_cols: Vec<usize> = (0..=j)
            .filter(|&k| inner(vol, s, t, ph(k), ph(k)) > 0.0)
            .collect();
        let ny = y_rows.len();
        let nx = x_cols.len();
        let sigma_t = DMatrix::from_fn(ny, ny, |a, b| {
            inner(vol, s, t, sig(y_rows[a]), sig(y_rows[b]))
        });
        let sigma_s = DMatrix::from_fn(ny, ny, |a, b| {
            inner(vol, s, t, sig_s(y_rows[a]), sig_s(y_rows[b]))
        });
        let psi_t = DMatrix::from_fn(ny, nx, |a, b| {
            inner(vol, s, t, sig(y_rows[a]), ph(x_cols[b]))
        });
        let psi_s = DMatrix::from_fn(nx, ny, |a, b| {
            inner(vol, s, t, ph(x_cols[a]), sig_s(y_rows[b]))
        });
        let phi_t = DMatrix::from_fn(nx, nx, |a, b| {
            inner(vol, s, t, ph(x_cols[a]), ph(x_cols[b]))
        });

        let chol = sigma_t
            .clone()
            .cholesky()
            .ok_or(KernelError::GramSingular(j))?;
        let diag = chol.l().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
        if ny > 0 && lo * lo < GRAM_RCOND * hi * hi {
            return Err(KernelError::GramSingular(j));
        }
        let a = chol.solve(&psi_t);
        let b = chol.solve(&sigma_s);
        let cov_x = &phi_t - psi_t.transpose() * &a;
        let cov_z = &sigma_s - sigma_s.transpose() * &b;
        let cov_xz = &psi_s - psi_t.transpose() * &b;
        columns.push(ColumnBlocks {
            column: j,
            y_rows,
            x_cols,
            sigma_t,
            sigma_s,
            psi_t,
            psi_s,
            phi_t,
            a,
            b,
            cov_x,
            cov_z,
            cov_xz,
        });
    }
    Ok(RegressionBlocks { s, t, columns })
}

/// Symmetric square root factor `L` with `L L' = m`, clamping tiny negative eigenvalues.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Monte Carlo estimate of `E[1{S_s >= x} Gamma / prod S_s | Y = y]` for general volatility.
///
/// `y[i][j]` holds `int_0^t sigma_ij dW^j` for `i >= j`. Residuals of the regression are
/// drawn from their Gaussian law; draws come from `RngStream(seed, u64::MAX, 0)`.
#[allow(clippy::too_many_arguments)]
pub fn kernel_h_numeric(
    vol: &TriangularVol,
    blocks: &RegressionBlocks,
    s0: &[f64],
    rate: f64,
    x: &[f64],
    y: &[Vec<f64>],
    n_inner: usize,
    seed: u64,
) -> Result<f64, KernelError> {
    let d = vol.dim();
    if x.len() != d || s0.len() != d || y.len() != d {
        return Err(KernelError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let (s, t) = (blocks.s, blocks.t);
    let cov = compute_pi_covariance(vol, s, t);
    let plan = GammaPlan::new(&cov);
    // Deterministic part of log S_s.
    let base: Vec<f64> = (0..d)
        .map(|i| s0[i].ln() + rate * s - 0.5 * vol.integrated_variance(i, 0.0, s))
        .collect();

    struct Prepared {
        mean_x: DVector<f64>,
        mean_z: DVector<f64>,
        factor: DMatrix<f64>,
    }
    let prepared: Vec<Prepared> = blocks
        .columns
        .iter()
        .map(|cb| {
            let yv =
                DVector::from_iterator(cb.y_rows.len(), cb.y_rows.iter().map(|&i| y[i][cb.column]));
            let nx = cb.x_cols.len();
            let nz = cb.y_rows.len();
            let mut joint = DMatrix::zeros(nx + nz, nx + nz);
            joint.view_mut((0, 0), (nx, nx)).copy_from(&cb.cov_x);
            joint.view_mut((nx, nx), (nz, nz)).copy_from(&cb.cov_z);
            joint.view_mut((0, nx), (nx, nz)).copy_from(&cb.cov_xz);
            joint
                .view_mut((nx, 0), (nz, nx))
                .copy_from(&cb.cov_xz.transpose());
            Prepared {
                mean_x: cb.a.transpose() * &yv,
                mean_z: cb.b.transpose() * &yv,
                factor: psd_factor(&joint),
            }
        })
        .collect();

    let mut rng = RngStream::new(seed, u64::MAX, 0).rng();
    let mut total = 0.0;
    let mut pi = vec![0.0; d];
    let mut log_s = vec![0.0; d];
    let mut scratch = Vec::new();
    for _ in 0..n_inner {
        pi.iter_mut().for_each(|v| *v = 1.0);
        log_s.copy_from_slice(&base);
        for (cb, pr) in blocks.columns.iter().zip(&prepared) {
            let dim = pr.factor.nrows();
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let draw = &pr.factor * z;
            let nx = cb.x_cols.len();
            for (a, &k) in cb.x_cols.iter().enumerate() {
                pi[k] += pr.mean_x[a] + draw[a];
            }
            for (a, &i) in cb.y_rows.iter().enumerate() {
                log_s[i] += pr.mean_z[a] + draw[nx + a];
            }
        }
        if (0..d).all(|i| log_s[i] >= x[i].ln()) {
            let g = plan.eval_with(&pi, &mut scratch);
            let prod_s: f64 = log_s.iter().sum::<f64>();
            total += g * (-prod_s).exp();
        }
    }
    Ok(total / n_inner as f64)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}
