//! One-factor Gaussian-copula default update.
//!
//! Obligor `i` has creditworthiness `X_i = ρ_i Y + √(1−ρ_i²) ε_i` with `Y` and
//! the `ε_i` i.i.d. standard Normal, and defaults when `X_i ≤ c_i`. Learning
//! that obligor `k` sits exactly at its boundary, `X_k = b`, is the weighted-sum
//! constraint `w'(Y, ε_k) = b` with `w = (ρ_k, √(1−ρ_k²))`. The conditional law
//! of `Y` then updates every other obligor's default probability:
//!
//! ```text
//! P(X_i ≤ c_i | X_k = b) = Φ((c_i − ρ_i E[Y|·]) / √(ρ_i² Var[Y|·] + 1 − ρ_i²))
//! ```
//!
//! A zero loading makes the event uninformative: `Y` stays standard Normal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use libm::erfc;

use crate::error::{Error, Result};
use crate::law::{condition_on_weighted_sum, ConditionalGaussian, Space, WeightVector};
use crate::moments::MomentAccumulator;
use crate::sampler::Sampler;

/// MC agreement threshold, in standard errors.
pub const MC_Z_THRESHOLD: f64 = 4.0;

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreditDemoConfig {
    pub loadings: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// 0-based index of the obligor observed at its boundary.
    pub observed: usize,
    /// Observed value of `X_observed`.
    pub boundary: f64,
}

impl CreditDemoConfig {
    /// Observation at the default threshold of `observed`.
    pub fn at_threshold(loadings: Vec<f64>, thresholds: Vec<f64>, observed: usize) -> Result<Self> {
        let boundary = *thresholds.get(observed).ok_or_else(|| {
            Error::InvalidArgument(format!("observed obligor {} does not exist", observed + 1))
        })?;
        let config = Self {
            loadings,
            thresholds,
            observed,
            boundary,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.loadings.is_empty() || self.loadings.len() != self.thresholds.len() {
            return Err(Error::InvalidArgument(format!(
                "need one threshold per loading (got {} loadings, {} thresholds)",
                self.loadings.len(),
                self.thresholds.len()
            )));
        }
        if let Some((i, rho)) = self
            .loadings
            .iter()
            .enumerate()
            .find(|(_, r)| r.is_nan() || r.abs() >= 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "loading {} = {rho} must lie strictly inside (-1, 1)",
                i + 1
            )));
        }
        if let Some(i) = self.thresholds.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold {} is not finite", i + 1)));
        }
        if self.observed >= self.loadings.len() {
            return Err(Error::InvalidArgument(format!(
                "observed obligor {} does not exist",
                self.observed + 1
            )));
        }
        if !self.boundary.is_finite() {
            return Err(Error::InvalidArgument("boundary must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorLaw {
    pub mean: f64,
    pub variance: f64,
}

/// `(Y, ε_k) | ρ_k Y + √(1−ρ_k²) ε_k = b`, or `None` when `ρ_k = 0`.
pub fn observation_law(rho: f64, boundary: f64) -> Result<Option<ConditionalGaussian>> {
    if rho == 0.0 {
        return Ok(None);
    }
    let weights = WeightVector::new(vec![rho, (1.0 - rho * rho).sqrt()])?;
    condition_on_weighted_sum(&weights, boundary, None).map(Some)
}

/// Law of the common factor given the observation.
pub fn conditional_factor_law(rho: f64, boundary: f64) -> Result<FactorLaw> {
    Ok(match observation_law(rho, boundary)? {
        None => FactorLaw {
            mean: 0.0,
            variance: 1.0,
        },
        Some(law) => {
            let (mean, cov) = law.z_space_full();
            FactorLaw {
                mean: mean[0],
                variance: cov[(0, 0)],
            }
        }
    })
}

pub fn conditional_default_probability(rho: f64, threshold: f64, factor: FactorLaw) -> f64 {
    let spread = (rho * rho * factor.variance + 1.0 - rho * rho).sqrt();
    standard_normal_cdf((threshold - rho * factor.mean) / spread)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObligorUpdate {
    /// 1-based.
    pub obligor: usize,
    pub loading: f64,
    pub threshold: f64,
    pub unconditional_pd: f64,
    pub conditional_pd: f64,
    pub monte_carlo_pd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloCheck {
    pub samples: usize,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
    pub mean_z: f64,
    pub variance_z: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreditReport {
    /// 1-based.
    pub observed: usize,
    pub boundary: f64,
    pub weights: [f64; 2],
    pub factor: FactorLaw,
    pub obligors: Vec<ObligorUpdate>,
    pub monte_carlo: MonteCarloCheck,
}

impl CreditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("credit report serializes")
    }
}

struct McChunk {
    factor: MomentAccumulator,
    pd_sums: Vec<f64>,
}

pub fn run_credit_demo(config: &CreditDemoConfig, samples: usize, seed: u64) -> Result<CreditReport> {
    config.validate()?;
    if samples < 2 {
        return Err(Error::InsufficientSamples {
            count: samples as u64,
            required: 2,
        });
    }
    let rho_k = config.loadings[config.observed];
    let factor = conditional_factor_law(rho_k, config.boundary)?;
    let others: Vec<usize> = (0..config.loadings.len())
        .filter(|&i| i != config.observed)
        .collect();

    // Rao–Blackwellized PD: average Φ((c_i − ρ_i Y)/√(1−ρ_i²)) over draws of Y.
    let summarize = |ys: &mut dyn Iterator<Item = f64>| {
        let mut acc = MomentAccumulator::new(1);
        let mut pd_sums = vec![0.0; others.len()];
        for y in ys {
            acc.push(&[y]);
            for (s, &i) in pd_sums.iter_mut().zip(&others) {
                let rho = config.loadings[i];
                *s += standard_normal_cdf((config.thresholds[i] - rho * y) / (1.0 - rho * rho).sqrt());
            }
        }
        McChunk { factor: acc, pd_sums }
    };

    let chunks: Vec<McChunk> = match observation_law(rho_k, config.boundary)? {
        Some(law) => Sampler::exact(&law)?.map_chunks(samples, seed, Space::Z, |chunk| {
            summarize(&mut chunk.iter_rows().map(|r| r[0]))
        }),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            vec![summarize(&mut (0..samples).map(|_| rng.sample::<f64, _>(StandardNormal)))]
        }
    };

    let mut acc = MomentAccumulator::new(1);
    let mut pd_sums = vec![0.0; others.len()];
    for c in &chunks {
        acc.merge(&c.factor);
        pd_sums.iter_mut().zip(&c.pd_sums).for_each(|(a, b)| *a += b);
    }
    let mc_mean = acc.mean()[0];
    let mc_var = acc.covariance().expect("at least two samples")[(0, 0)];
    let n = samples as f64;
    let mean_z = (mc_mean - factor.mean) / (mc_var / n).sqrt();
    let variance_z = (mc_var - factor.variance) / (2.0 * mc_var * mc_var / n).sqrt();

    let obligors = others
        .iter()
        .zip(&pd_sums)
        .map(|(&i, sum)| {
            let (rho, c) = (config.loadings[i], config.thresholds[i]);
            ObligorUpdate {
                obligor: i + 1,
                loading: rho,
                threshold: c,
                unconditional_pd: standard_normal_cdf(c),
                conditional_pd: conditional_default_probability(rho, c, factor),
                monte_carlo_pd: sum / n,
            }
        })
        .collect();

    Ok(CreditReport {
        observed: config.observed + 1,
        boundary: config.boundary,
        weights: [rho_k, (1.0 - rho_k * rho_k).sqrt()],
        factor,
        obligors,
        monte_carlo: MonteCarloCheck {
            samples,
            seed,
            mean: mc_mean,
            variance: mc_var,
            mean_z,
            variance_z,
            threshold: MC_Z_THRESHOLD,
            pass: mean_z.abs() <= MC_Z_THRESHOLD && variance_z.abs() <= MC_Z_THRESHOLD,
        },
    })
}
