//! Blocked all-pairs accumulation for square Monte Carlo.
//!
//! For every query `q` and every sample `m` a kernel value `K(q, m)` is
//! combined with a per-sample value `g_m`, accumulating
//! `sum K g`, `sum K`, `sum K^2 g^2`, `sum K^2 g` and `sum K^2`.
//! Sums are formed block by block in a fixed order so results do not depend
//! on the number of worker threads or on the instruction set in use.

use rayon::prelude::*;

/// Samples per block. Kernels store their per-sample data padded to a multiple of this.
pub const BLOCK: usize = 256;
pub(crate) const LANES: usize = 8;
const QUERY_TILE: usize = 32;

const EXP_HI: f64 = 709.0;
const EXP_LO: f64 = -708.0;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const LN2_HI: f64 = 0.693_147_180_369_123_8;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;

/// Branch-free exponential, relative error below 1e-14 on `[-708, 709]`.
/// Arguments below -708 map to 0.
#[inline(always)]
pub fn fast_exp(x: f64) -> f64 {
    let xc = x.clamp(EXP_LO, EXP_HI);
    let shifted = xc * std::f64::consts::LOG2_E + ROUND_MAGIC;
    let n = shifted - ROUND_MAGIC;
    let r = xc - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52);
    let v = p * scale;
    if x < EXP_LO {
        0.0
    } else {
        v
    }
}

/// Kernel evaluated between queries and blocks of samples.
pub trait PairKernel: Sync {
    fn n_queries(&self) -> usize;

    /// Number of real samples; storage is padded to whole blocks with zero-weight entries.
    fn n_samples(&self) -> usize;

    /// Writes `K(query, block * BLOCK + i)` for `i in 0..BLOCK`.
    fn eval_block(&self, query: usize, block: usize, out: &mut [f64; BLOCK]);

    fn n_blocks(&self) -> usize {
        self.n_samples().div_ceil(BLOCK)
    }

    fn eval_one(&self, query: usize, sample: usize) -> f64 {
        let mut out = [0.0; BLOCK];
        self.eval_block(query, sample / BLOCK, &mut out);
        out[sample % BLOCK]
    }
}

/// Raw sums for one query.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairMoments {
    pub n: usize,
    pub x: f64,
    pub y: f64,
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl PairMoments {
    fn add(&mut self, o: &[f64; 5]) {
        self.x += o[0];
        self.y += o[1];
        self.xx += o[2];
        self.xy += o[3];
        self.yy += o[4];
    }
}

/// Per-query totals plus prefix checkpoints at block boundaries.
#[derive(Debug, Clone)]
pub struct PairSums {
    pub totals: Vec<PairMoments>,
    n_blocks: usize,
    /// `(x, y)` prefix sums before each block, `n_blocks + 1` entries per query.
    checkpoints: Vec<[f64; 2]>,
}

impl PairSums {
    pub fn checkpoint(&self, query: usize, block: usize) -> [f64; 2] {
        self.checkpoints[query * (self.n_blocks + 1) + block]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Isa {
    Generic,
    #[cfg(target_arch = "x86_64")]
    Avx2Fma,
}

impl Isa {
    pub fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                return Isa::Avx2Fma;
            }
        }
        Isa::Generic
    }
}

/// Pads `values` with zeros to a whole number of blocks.
pub fn pad_values(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.resize(values.len().div_ceil(BLOCK) * BLOCK, 0.0);
    v
}

pub fn accumulate<K: PairKernel>(kernel: &K, values: &[f64]) -> PairSums {
    accumulate_with(kernel, values, Isa::detect())
}

pub fn accumulate_with<K: PairKernel>(kernel: &K, values: &[f64], isa: Isa) -> PairSums {
    assert_eq!(values.len(), kernel.n_samples(), "one value per sample");
    let padded = pad_values(values);
    let nq = kernel.n_queries();
    let nb = kernel.n_blocks();
    let tiles: Vec<(usize, usize)> = (0..nq)
        .step_by(QUERY_TILE)
        .map(|q0| (q0, (q0 + QUERY_TILE).min(nq)))
        .collect();
    let parts: Vec<(Vec<PairMoments>, Vec<[f64; 2]>)> = tiles
        .par_iter()
        .map(|&(q0, q1)| {
            let mut totals = vec![
                PairMoments {
                    n: kernel.n_samples(),
                    ..Default::default()
                };
                q1 - q0
            ];
            let mut cps = vec![[0.0; 2]; (q1 - q0) * (nb + 1)];
            run_tile(kernel, &padded, q0, q1, &mut totals, &mut cps, isa);
            (totals, cps)
        })
        .collect();
    let mut totals = Vec::with_capacity(nq);
    let mut checkpoints = Vec::with_capacity(nq * (nb + 1));
    for (t, c) in parts {
        totals.extend(t);
        checkpoints.extend(c);
    }
    PairSums {
        totals,
        n_blocks: nb,
        checkpoints,
    }
}

/// `(sum K g, sum K)` over the first `n` samples for one query.
pub fn prefix<K: PairKernel>(
    kernel: &K,
    values: &[f64],
    sums: &PairSums,
    query: usize,
    n: usize,
) -> [f64; 2] {
    assert!(n <= kernel.n_samples());
    let block = n / BLOCK;
    let mut acc = sums.checkpoint(query, block);
    let rem = n % BLOCK;
    if rem > 0 {
        let mut out = [0.0; BLOCK];
        kernel.eval_block(query, block, &mut out);
        let base = block * BLOCK;
        for i in 0..rem {
            acc[0] += out[i] * values[base + i];
            acc[1] += out[i];
        }
    }
    acc
}

fn run_tile<K: PairKernel>(
    kernel: &K,
    values: &[f64],
    q0: usize,
    q1: usize,
    totals: &mut [PairMoments],
    cps: &mut [[f64; 2]],
    isa: Isa,
) {
    match isa {
        Isa::Generic => tile_body(kernel, values, q0, q1, totals, cps),
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2Fma => {
            // SAFETY: Avx2Fma is only constructed after runtime feature detection.
            unsafe { tile_avx2(kernel, values, q0, q1, totals, cps) }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tile_avx2<K: PairKernel>(
    kernel: &K,
    values: &[f64],
    q0: usize,
    q1: usize,
    totals: &mut [PairMoments],
    cps: &mut [[f64; 2]],
) {
    tile_body(kernel, values, q0, q1, totals, cps)
}

#[inline(always)]
fn tile_body<K: PairKernel>(
    kernel: &K,
    values: &[f64],
    q0: usize,
    q1: usize,
    totals: &mut [PairMoments],
    cps: &mut [[f64; 2]],
) {
    let nb = kernel.n_blocks();
    let mut out = [0.0; BLOCK];
    for b in 0..nb {
        let g: &[f64; BLOCK] = values[b * BLOCK..(b + 1) * BLOCK]
            .try_into()
            .expect("block");
        for q in q0..q1 {
            let local = q - q0;
            cps[local * (nb + 1) + b] = [totals[local].x, totals[local].y];
            kernel.eval_block(q, b, &mut out);
            let s = block_moments(&out, g);
            totals[local].add(&s);
        }
    }
    for q in q0..q1 {
        let local = q - q0;
        cps[local * (nb + 1) + nb] = [totals[local].x, totals[local].y];
    }
}

#[inline(always)]
fn block_moments(k: &[f64; BLOCK], g: &[f64; BLOCK]) -> [f64; 5] {
    let mut x = [0.0; LANES];
    let mut y = [0.0; LANES];
    let mut xx = [0.0; LANES];
    let mut xy = [0.0; LANES];
    let mut yy = [0.0; LANES];
    for c in 0..BLOCK / LANES {
        for i in 0..LANES {
            let kv = k[c * LANES + i];
            let xv = kv * g[c * LANES + i];
            x[i] += xv;
            y[i] += kv;
            xx[i] += xv * xv;
            xy[i] += xv * kv;
            yy[i] += kv * kv;
        }
    }
    [
        lane_sum(&x),
        lane_sum(&y),
        lane_sum(&xx),
        lane_sum(&xy),
        lane_sum(&yy),
    ]
}

#[inline(always)]
fn lane_sum(v: &[f64; LANES]) -> f64 {
    ((v[0] + v[4]) + (v[1] + v[5])) + ((v[2] + v[6]) + (v[3] + v[7]))
}

/// `K(q, m) = exp(offset_q + bias_m + sum_k slope_qk * feature_km)`.
#[derive(Debug, Clone)]
pub struct ExpLinearKernel {
    dim: usize,
    n_samples: usize,
    /// Per block: `dim` feature rows then one bias row, each `BLOCK` long.
    samples: Vec<f64>,
    slopes: Vec<f64>,
    offsets: Vec<f64>,
}

impl ExpLinearKernel {
    /// `features[k][m]`, `bias[m]`, `slopes[q][k]`, `offsets[q]`.
    pub fn new(features: &[Vec<f64>], bias: &[f64], slopes: Vec<f64>, offsets: Vec<f64>) -> Self {
        let dim = features.len();
        let n = bias.len();
        assert!(features.iter().all(|f| f.len() == n));
        assert_eq!(slopes.len(), offsets.len() * dim);
        let nb = n.div_ceil(BLOCK);
        let row = BLOCK;
        let stride = (dim + 1) * row;
        let mut samples = vec![0.0; nb * stride];
        for b in 0..nb {
            let base = b * stride;
            for i in 0..BLOCK {
                let m = b * BLOCK + i;
                let real = m < n;
                for k in 0..dim {
                    samples[base + k * row + i] = if real { features[k][m] } else { 0.0 };
                }
                samples[base + dim * row + i] = if real { bias[m] } else { f64::NEG_INFINITY };
            }
        }
        Self {
            dim,
            n_samples: n,
            samples,
            slopes,
            offsets,
        }
    }
}

impl PairKernel for ExpLinearKernel {
    fn n_queries(&self) -> usize {
        self.offsets.len()
    }

    fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline(always)]
    fn eval_block(&self, query: usize, block: usize, out: &mut [f64; BLOCK]) {
        let d = self.dim;
        let stride = (d + 1) * BLOCK;
        let data = &self.samples[block * stride..(block + 1) * stride];
        let bias: &[f64; BLOCK] = data[d * BLOCK..].try_into().expect("bias row");
        let off = self.offsets[query];
        for i in 0..BLOCK {
            out[i] = off + bias[i];
        }
        for k in 0..d {
            let a = self.slopes[query * d + k];
            let f: &[f64; BLOCK] = data[k * BLOCK..(k + 1) * BLOCK].try_into().expect("row");
            for i in 0..BLOCK {
                out[i] += a * f[i];
            }
        }
        for v in out.iter_mut() {
            *v = fast_exp(*v);
        }
    }
}

/// `K(q, m) = weight_m` if `level_km >= threshold_qk` for every `k`, else 0.
#[derive(Debug, Clone)]
pub struct IndicatorKernel {
    dim: usize,
    n_samples: usize,
    samples: Vec<f64>,
    thresholds: Vec<f64>,
}

impl IndicatorKernel {
    /// `levels[k][m]`, `weights[m]`, `thresholds[q][k]` flattened.
    pub fn new(levels: &[Vec<f64>], weights: &[f64], thresholds: Vec<f64>) -> Self {
        let dim = levels.len();
        let n = weights.len();
        assert!(levels.iter().all(|f| f.len() == n));
        assert_eq!(thresholds.len() % dim.max(1), 0);
        let nb = n.div_ceil(BLOCK);
        let stride = (dim + 1) * BLOCK;
        let mut samples = vec![0.0; nb * stride];
        for b in 0..nb {
            let base = b * stride;
            for i in 0..BLOCK {
                let m = b * BLOCK + i;
                let real = m < n;
                for k in 0..dim {
                    samples[base + k * BLOCK + i] = if real { levels[k][m] } else { 0.0 };
                }
                samples[base + dim * BLOCK + i] = if real { weights[m] } else { 0.0 };
            }
        }
        Self {
            dim,
            n_samples: n,
            samples,
            thresholds,
        }
    }
}

impl PairKernel for IndicatorKernel {
    fn n_queries(&self) -> usize {
        self.thresholds.len() / self.dim
    }

    fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline(always)]
    fn eval_block(&self, query: usize, block: usize, out: &mut [f64; BLOCK]) {
        let d = self.dim;
        let stride = (d + 1) * BLOCK;
        let data = &self.samples[block * stride..(block + 1) * stride];
        let mut keep = [true; BLOCK];
        for k in 0..d {
            let x = self.thresholds[query * d + k];
            let f: &[f64; BLOCK] = data[k * BLOCK..(k + 1) * BLOCK].try_into().expect("row");
            for i in 0..BLOCK {
                keep[i] &= f[i] >= x;
            }
        }
        let w: &[f64; BLOCK] = data[d * BLOCK..].try_into().expect("weight row");
        for i in 0..BLOCK {
            out[i] = if keep[i] { w[i] } else { 0.0 };
        }
    }
}
