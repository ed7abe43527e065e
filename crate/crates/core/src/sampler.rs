//! Sampling on the hyperplane `w'z = c`.
//!
//! [`Method::Exact`] draws from the conditional law: `x = μ + L g` over the
//! retained coordinates (`Σ = L L'`), then the pivot is filled in from the
//! constraint. The three naive methods also land exactly on the hyperplane but
//! have the wrong distribution; they are kept as baselines that the verifier
//! should reject.
//!
//! Randomness: each chunk of `chunk_size` rows gets its own ChaCha8 stream
//! (`seed`, stream = chunk index) and standard Normals come from the ziggurat
//! transform of `rand_distr`. Output therefore depends on `(method,
//! parameters, seed, chunk_size)` only, never on thread count.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{ConditionalGaussian, Space, WeightVector};

pub const DEFAULT_CHUNK: usize = 65_536;
pub const GENERATOR: &str = "chacha8-stream-per-chunk";
pub const NORMAL_TRANSFORM: &str = "ziggurat";

/// `|ỹ|` below this makes the rescale scheme redraw.
pub const RESCALE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    /// `Z_j ~ N(0,1)` for `j < n`, `Z_n = (c − Σ_{j<n} w_j Z_j)/w_n`.
    LastCoord,
    /// `Z = (c/ỹ) Z̃` with `ỹ = w'Z̃`.
    Rescale,
    /// `Z_i = Z̃_i + (c − ỹ)/(n w_i)`.
    Shift,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::LastCoord => "last-coord",
            Method::Rescale => "rescale",
            Method::Shift => "shift",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "last-coord" => Ok(Method::LastCoord),
            "rescale" => Ok(Method::Rescale),
            "shift" => Ok(Method::Shift),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Lower-triangular `L` with `Σ = L L'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// `out = L g`.
    fn mul_into(&self, g: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += self.lower[(i, k)] * g[k];
            }
            out[i] = acc;
        }
    }
}

/// Cholesky–Banachiewicz on the lower triangle of `sigma`. Fails when a pivot
/// drops to `d·ε·max diag` or below.
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let d = sigma.nrows();
    if d == 0 || sigma.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d.max(1),
            found: sigma.ncols(),
        });
    }
    let max_diag = (0..d).map(|i| sigma[(i, i)]).fold(0.0, f64::max);
    let floor = d as f64 * f64::EPSILON * max_diag;
    let mut lower = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let mut acc = sigma[(i, j)];
            for k in 0..j {
                acc -= lower[(i, k)] * lower[(j, k)];
            }
            if i == j {
                if acc.is_nan() || acc <= floor {
                    return Err(Error::NotPositiveDefinite { index: i, value: acc });
                }
                lower[(i, i)] = acc.sqrt();
            } else {
                lower[(i, j)] = acc / lower[(j, j)];
            }
        }
    }
    Ok(CholeskyFactor { lower })
}

/// One chunk of generated rows, row-major.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub index: usize,
    pub rows: usize,
    pub dim: usize,
    pub space: Space,
    pub points: Vec<f64>,
    /// Rescale draws thrown away because `|ỹ| < RESCALE_FLOOR`.
    pub redraws: u64,
}

impl Chunk {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.points[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone)]
struct ExactPlan {
    law: ConditionalGaussian,
    factor: CholeskyFactor,
}

#[derive(Debug, Clone)]
pub struct Sampler {
    method: Method,
    weights: WeightVector,
    c: f64,
    exact: Option<ExactPlan>,
    chunk_size: usize,
}

impl Sampler {
    pub fn exact(law: &ConditionalGaussian) -> Result<Self> {
        let factor = cholesky(law.sigma())?;
        Ok(Self {
            method: Method::Exact,
            weights: law.weights().clone(),
            c: law.c(),
            exact: Some(ExactPlan {
                law: law.clone(),
                factor,
            }),
            chunk_size: DEFAULT_CHUNK,
        })
    }

    pub fn naive(method: Method, weights: &WeightVector, c: f64) -> Result<Self> {
        if method == Method::Exact {
            return Err(Error::InvalidArgument(
                "the exact sampler is built from a conditional law".into(),
            ));
        }
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("c must be finite, got {c}")));
        }
        Ok(Self {
            method,
            weights: weights.clone(),
            c,
            exact: None,
            chunk_size: DEFAULT_CHUNK,
        })
    }

    /// Any method for the constraint described by `law`.
    pub fn for_law(method: Method, law: &ConditionalGaussian) -> Result<Self> {
        match method {
            Method::Exact => Self::exact(law),
            other => Self::naive(other, law.weights(), law.c()),
        }
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size.max(1);
        self
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn cholesky_factor(&self) -> Option<&CholeskyFactor> {
        self.exact.as_ref().map(|p| &p.factor)
    }

    /// `c = 0` makes the rescale scheme return the zero vector every time.
    pub fn is_degenerate_use(&self) -> bool {
        self.method == Method::Rescale && self.c == 0.0
    }

    /// Generates chunk `index` holding `rows` rows.
    pub fn chunk(&self, seed: u64, index: usize, rows: usize, space: Space) -> Chunk {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let n = self.weights.len();
        let w = self.weights.as_slice();
        let mut points = vec![0.0; rows * n];
        let mut redraws = 0;

        match &self.exact {
            Some(plan) => {
                let d = n - 1;
                let mu = plan.law.mean();
                let mut g = vec![0.0; d];
                let mut x = vec![0.0; d];
                for row in points.chunks_exact_mut(n) {
                    g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    plan.factor.mul_into(&g, &mut x);
                    x.iter_mut().zip(mu).for_each(|(v, m)| *v += m);
                    plan.law
                        .lift_into(&x, row)
                        .expect("retained dimension matches law");
                }
            }
            None => {
                for row in points.chunks_exact_mut(n) {
                    redraws += self.naive_row(&mut rng, row);
                }
            }
        }

        let native = self.native_space();
        if native != space {
            for row in points.chunks_exact_mut(n) {
                for (v, wi) in row.iter_mut().zip(w) {
                    match space {
                        Space::Z => *v /= wi,
                        Space::X => *v *= wi,
                    }
                }
            }
        }

        Chunk {
            index,
            rows,
            dim: n,
            space,
            points,
            redraws,
        }
    }

    /// Fills one Z-space row for a naive method; returns the number of
    /// discarded rescale draws.
    fn naive_row(&self, rng: &mut ChaCha8Rng, row: &mut [f64]) -> u64 {
        let w = self.weights.as_slice();
        let n = w.len();
        let c = self.c;
        match self.method {
            Method::LastCoord => {
                let mut partial = 0.0;
                for j in 0..n - 1 {
                    row[j] = rng.sample(StandardNormal);
                    partial += w[j] * row[j];
                }
                row[n - 1] = (c - partial) / w[n - 1];
                0
            }
            Method::Rescale => {
                let mut redraws = 0;
                loop {
                    row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    let y = self.weights.dot(row);
                    if y.abs() >= RESCALE_FLOOR {
                        let factor = c / y;
                        row.iter_mut().for_each(|v| *v *= factor);
                        return redraws;
                    }
                    redraws += 1;
                }
            }
            Method::Shift => {
                row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let gap = c - self.weights.dot(row);
                for (v, wi) in row.iter_mut().zip(w) {
                    *v += gap / (n as f64 * wi);
                }
                0
            }
            Method::Exact => unreachable!("exact rows are drawn through the law"),
        }
    }

    pub fn native_space(&self) -> Space {
        match self.method {
            Method::Exact => Space::X,
            _ => Space::Z,
        }
    }

    fn chunk_layout(&self, count: usize) -> Vec<(usize, usize)> {
        let chunks = count.div_ceil(self.chunk_size);
        (0..chunks)
            .map(|i| (i, self.chunk_size.min(count - i * self.chunk_size)))
            .collect()
    }

    /// Generates `count` rows chunk by chunk in parallel and applies `f` to
    /// each chunk; results come back in chunk order. Only one chunk per worker
    /// is alive at a time.
    pub fn map_chunks<A, F>(&self, count: usize, seed: u64, space: Space, f: F) -> Vec<A>
    where
        A: Send,
        F: Fn(&Chunk) -> A + Sync,
    {
        self.chunk_layout(count)
            .into_par_iter()
            .map(|(index, rows)| f(&self.chunk(seed, index, rows, space)))
            .collect()
    }

    pub fn sample(&self, count: usize, seed: u64, space: Space) -> Result<SampleBatch> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let chunks = self.map_chunks(count, seed, space, |c| c.clone());
        let dim = self.weights.len();
        let mut points = Vec::with_capacity(count * dim);
        let mut redraws = 0;
        for chunk in chunks {
            points.extend_from_slice(&chunk.points);
            redraws += chunk.redraws;
        }
        Ok(SampleBatch {
            points,
            rows: count,
            dim,
            method: self.method,
            seed,
            space,
            chunk_size: self.chunk_size,
            redraws,
            degenerate_use: self.is_degenerate_use(),
        })
    }
}

/// `count` full-length rows produced by one sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Row-major `rows × dim`.
    pub points: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
    pub method: Method,
    pub seed: u64,
    pub space: Space,
    pub chunk_size: usize,
    /// Rescale draws discarded for `|ỹ| < RESCALE_FLOOR`.
    pub redraws: u64,
    /// Rescale with `c = 0`: every row is the zero vector.
    pub degenerate_use: bool,
}

impl SampleBatch {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.points[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    pub fn generator(&self) -> &'static str {
        GENERATOR
    }

    pub fn normal_transform(&self) -> &'static str {
        NORMAL_TRANSFORM
    }

    /// Largest `|w'z − c|` (Z-space) or `|Σ x − c|` (X-space) over all rows.
    pub fn max_residual(&self, weights: &WeightVector, c: f64) -> f64 {
        self.iter_rows()
            .map(|row| residual(row, self.space, weights, c).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn residual(row: &[f64], space: Space, weights: &WeightVector, c: f64) -> f64 {
    match space {
        Space::X => row.iter().sum::<f64>() - c,
        Space::Z => weights.dot(row) - c,
    }
}

pub fn sample_exact(law: &ConditionalGaussian, count: usize, seed: u64) -> Result<SampleBatch> {
    Sampler::exact(law)?.sample(count, seed, Space::X)
}

pub fn sample_naive_last_coord(
    weights: &WeightVector,
    c: f64,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    Sampler::naive(Method::LastCoord, weights, c)?.sample(count, seed, Space::Z)
}

pub fn sample_naive_rescale(
    weights: &WeightVector,
    c: f64,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    Sampler::naive(Method::Rescale, weights, c)?.sample(count, seed, Space::Z)
}

pub fn sample_naive_shift(
    weights: &WeightVector,
    c: f64,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    Sampler::naive(Method::Shift, weights, c)?.sample(count, seed, Space::Z)
}
