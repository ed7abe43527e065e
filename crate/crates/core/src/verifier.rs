//! Independent checks of the conditional law.
//!
//! Two oracles share no code path with [`crate::law`]:
//!
//! * [`slice_oracle`] draws unconditioned `Z ~ N(0, I)` and keeps the draws
//!   whose weighted sum lands within `ε` of `c`. Its moments carry `O(ε²)`
//!   bias and Monte Carlo noise but no algebra.
//! * [`dense_conditioning_oracle`] conditions `N(0, diag(w²))` on `1'X = c`
//!   with generic dense linear algebra.
//!
//! [`compare`] turns empirical moments into per-entry z-scores against the
//! analytic law. Covariance standard errors use the Normal fourth-moment
//! identity `Var(S_ij) ≈ (Σ_ii Σ_jj + Σ_ij²)/N`, which is only approximate for
//! non-Normal samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{marginal_sum_density, ConditionalGaussian, Space, WeightVector};
use crate::moments::MomentAccumulator;
use crate::sampler::{residual, SampleBatch, Sampler, DEFAULT_CHUNK};

pub const MIN_PROPOSALS: u64 = 10_000;
pub const MIN_ACCEPTED: u64 = 100;
pub const DENSE_TOLERANCE: f64 = 1e-10;

/// Slice-oracle streams live above this offset so they never coincide with
/// sampler streams drawn from the same seed.
const SLICE_STREAM_OFFSET: u64 = 1 << 32;

/// Default band half-width, `0.02 ‖w‖`.
pub fn default_epsilon(weights: &WeightVector) -> f64 {
    0.02 * weights.norm_sq().sqrt()
}

/// First-order acceptance probability of the slice oracle,
/// `2 ε φ(c; 0, ‖w‖)`.
pub fn expected_acceptance_rate(weights: &WeightVector, c: f64, epsilon: f64) -> f64 {
    2.0 * epsilon * marginal_sum_density(weights, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub mean: f64,
    pub covariance: f64,
}

impl Thresholds {
    pub fn uniform(z: f64) -> Self {
        Self {
            mean: z,
            covariance: z,
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            mean: 5.0,
            covariance: 6.0,
        }
    }
}

/// Sample mean and covariance of full-length vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub count: u64,
    pub proposals: u64,
    /// Band half-width for slice-oracle estimates.
    pub band: Option<f64>,
    pub space: Space,
    pub seed: u64,
    pub source: String,
}

impl EmpiricalMoments {
    fn from_accumulator(
        acc: &MomentAccumulator,
        proposals: u64,
        band: Option<f64>,
        space: Space,
        seed: u64,
        source: String,
    ) -> Result<Self> {
        let covariance = acc.covariance().ok_or(Error::InsufficientSamples {
            count: acc.count(),
            required: 2,
        })?;
        Ok(Self {
            mean: acc.mean().to_vec(),
            covariance,
            count: acc.count(),
            proposals,
            band,
            space,
            seed,
            source,
        })
    }

    pub fn from_batch(batch: &SampleBatch) -> Result<Self> {
        let mut acc = MomentAccumulator::new(batch.dim);
        batch.iter_rows().for_each(|r| acc.push(r));
        Self::from_accumulator(
            &acc,
            batch.rows as u64,
            None,
            batch.space,
            batch.seed,
            batch.method.to_string(),
        )
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.count as f64 / self.proposals as f64
    }
}

/// Rejection estimate of the moments of `Z | w'Z = c`: draws
/// `Z ~ N(0, I_n)` and keeps those with `|w'Z − c| < ε`.
pub fn slice_oracle(
    weights: &WeightVector,
    c: f64,
    epsilon: f64,
    proposals: u64,
    seed: u64,
) -> Result<EmpiricalMoments> {
    slice_oracle_chunked(weights, c, epsilon, proposals, seed, DEFAULT_CHUNK)
}

pub fn slice_oracle_chunked(
    weights: &WeightVector,
    c: f64,
    epsilon: f64,
    proposals: u64,
    seed: u64,
    chunk_size: usize,
) -> Result<EmpiricalMoments> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if proposals < MIN_PROPOSALS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_PROPOSALS} proposals are required, got {proposals}"
        )));
    }
    let n = weights.len();
    let chunk = chunk_size.max(1) as u64;
    let chunks = proposals.div_ceil(chunk);

    let partials: Vec<MomentAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|index| {
            let rows = chunk.min(proposals - index * chunk);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(SLICE_STREAM_OFFSET + index);
            let mut acc = MomentAccumulator::new(n);
            let mut z = vec![0.0; n];
            for _ in 0..rows {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                if (weights.dot(&z) - c).abs() < epsilon {
                    acc.push(&z);
                }
            }
            acc
        })
        .collect();

    let mut total = MomentAccumulator::new(n);
    partials.iter().for_each(|p| total.merge(p));
    if total.count() < MIN_ACCEPTED {
        return Err(Error::TooFewAccepted {
            accepted: total.count(),
            required: MIN_ACCEPTED,
        });
    }
    EmpiricalMoments::from_accumulator(
        &total,
        proposals,
        Some(epsilon),
        Space::Z,
        seed,
        "slice-oracle".into(),
    )
}

/// Textbook conditioning of `X ~ N(0, D)`, `D = diag(w²)`, on `A X = c` with
/// `A = 1'`:
///
/// ```text
/// mean = D A' (A D A')⁻¹ c        cov = D − D A' (A D A')⁻¹ A D
/// ```
///
/// Returns the full n-dimensional (singular) X-space moments.
pub fn dense_conditioning_oracle(weights: &WeightVector, c: f64) -> (Vec<f64>, DMatrix<f64>) {
    let n = weights.len();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        weights.as_slice().iter().map(|w| w * w),
    ));
    let a = DMatrix::<f64>::from_element(1, n, 1.0);
    let gram = &a * &d * a.transpose();
    let cross = &d * a.transpose();
    // gain = D A' (A D A')⁻¹, via a solve on the transposed system
    let gain = gram
        .lu()
        .solve(&cross.transpose())
        .expect("A D A' is positive for nonzero weights")
        .transpose();
    let mean = &gain * DVector::from_element(1, c);
    let cov = &d - &gain * &a * &d;
    (mean.iter().copied().collect(), cov)
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseOracleReport {
    pub max_rel_error_mean: f64,
    pub max_rel_error_covariance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Entrywise relative discrepancy between the law and the dense oracle over
/// the retained coordinates.
pub fn check_against_dense_oracle(law: &ConditionalGaussian) -> DenseOracleReport {
    let (mean, cov) = dense_conditioning_oracle(law.weights(), law.c());
    let retained = law.retained();
    let mut max_mean: f64 = 0.0;
    let mut max_cov: f64 = 0.0;
    for (k, &i) in retained.iter().enumerate() {
        max_mean = max_mean.max(relative_error(law.mean()[k], mean[i]));
        for (l, &j) in retained.iter().enumerate() {
            max_cov = max_cov.max(relative_error(law.sigma()[(k, l)], cov[(i, j)]));
        }
    }
    DenseOracleReport {
        max_rel_error_mean: max_mean,
        max_rel_error_covariance: max_cov,
        tolerance: DENSE_TOLERANCE,
        pass: max_mean <= DENSE_TOLERANCE && max_cov <= DENSE_TOLERANCE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// z-scores of empirical moments against the analytic law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub source: String,
    pub space: Space,
    pub verdict: Verdict,
    pub mean_threshold: f64,
    pub covariance_threshold: f64,
    pub max_abs_z_mean: f64,
    pub max_abs_z_covariance: f64,
    /// Original (0-based) indices of the compared coordinates.
    pub coordinates: Vec<usize>,
    pub mean_z: Vec<f64>,
    pub covariance_z: Vec<Vec<f64>>,
    pub count: u64,
    pub proposals: u64,
    pub epsilon: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<f64>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}

/// Compares empirical moments (full length `n`, or already restricted to the
/// retained `n − 1` coordinates) with the law in the empirical moments' space.
pub fn compare(
    analytic: &ConditionalGaussian,
    empirical: &EmpiricalMoments,
    thresholds: Thresholds,
) -> Result<VerificationReport> {
    let n = analytic.weights().len();
    let coords: Vec<usize> = if empirical.mean.len() == n {
        analytic.retained().to_vec()
    } else if empirical.mean.len() == n - 1 {
        (0..n - 1).collect()
    } else {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            found: empirical.mean.len(),
        });
    };
    if empirical.covariance.nrows() != empirical.mean.len()
        || empirical.covariance.ncols() != empirical.mean.len()
    {
        return Err(Error::DimensionMismatch {
            expected: empirical.mean.len(),
            found: empirical.covariance.nrows(),
        });
    }
    if empirical.count < 2 {
        return Err(Error::InsufficientSamples {
            count: empirical.count,
            required: 2,
        });
    }

    let (mean, cov) = match empirical.space {
        Space::X => (analytic.mean().to_vec(), analytic.sigma().clone()),
        Space::Z => analytic.z_space_law(),
    };
    let count = empirical.count as f64;
    let emp_cov = |k: usize, l: usize| empirical.covariance[(coords[k], coords[l])];

    let d = coords.len();
    let mean_z: Vec<f64> = (0..d)
        .map(|k| {
            let se = (emp_cov(k, k) / count).sqrt();
            z_score(empirical.mean[coords[k]] - mean[k], se)
        })
        .collect();
    let covariance_z: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            (0..d)
                .map(|l| {
                    let se = ((emp_cov(k, k) * emp_cov(l, l) + emp_cov(k, l).powi(2)) / count)
                        .sqrt();
                    z_score(emp_cov(k, l) - cov[(k, l)], se)
                })
                .collect()
        })
        .collect();

    let max_abs = |vals: &mut dyn Iterator<Item = f64>| {
        vals.fold(0.0f64, |acc, z| if z.is_nan() { f64::INFINITY } else { acc.max(z.abs()) })
    };
    let max_abs_z_mean = max_abs(&mut mean_z.iter().copied());
    let max_abs_z_covariance = max_abs(&mut covariance_z.iter().flatten().copied());
    let verdict = if max_abs_z_mean <= thresholds.mean && max_abs_z_covariance <= thresholds.covariance
    {
        Verdict::Pass
    } else {
        Verdict::Fail
    };

    Ok(VerificationReport {
        source: empirical.source.clone(),
        space: empirical.space,
        verdict,
        mean_threshold: thresholds.mean,
        covariance_threshold: thresholds.covariance,
        max_abs_z_mean,
        max_abs_z_covariance,
        coordinates: coords.iter().map(|&k| if empirical.mean.len() == n { k } else { analytic.retained()[k] }).collect(),
        mean_z,
        covariance_z,
        count: empirical.count,
        proposals: empirical.proposals,
        epsilon: empirical.band,
        seed: empirical.seed,
        wall_time_ms: None,
    })
}

/// Streamed summary of a sampler run; nothing of size `count × n` is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerStatistics {
    pub moments: EmpiricalMoments,
    /// Largest constraint residual, in the batch's space.
    pub max_residual: f64,
    /// Mean of `(x−μ)'Σ⁻¹(x−μ)` over the retained X coordinates; χ²(n−1)
    /// under the exact sampler.
    pub mahalanobis_mean: f64,
    pub redraws: u64,
}

struct ChunkSummary {
    acc: MomentAccumulator,
    max_residual: f64,
    mahalanobis_sum: f64,
    redraws: u64,
}

pub fn sampler_statistics(
    sampler: &Sampler,
    law: &ConditionalGaussian,
    count: usize,
    seed: u64,
    space: Space,
) -> Result<SamplerStatistics> {
    if count < 2 {
        return Err(Error::InsufficientSamples {
            count: count as u64,
            required: 2,
        });
    }
    let n = law.weights().len();
    let w = law.weights().as_slice();
    let retained = law.retained();
    let summaries = sampler.map_chunks(count, seed, space, |chunk| {
        let mut acc = MomentAccumulator::new(n);
        let mut max_residual: f64 = 0.0;
        let mut mahalanobis_sum = 0.0;
        let mut x = vec![0.0; n - 1];
        for row in chunk.iter_rows() {
            acc.push(row);
            max_residual = max_residual.max(residual(row, space, law.weights(), law.c()).abs());
            for (k, &i) in retained.iter().enumerate() {
                x[k] = match space {
                    Space::X => row[i],
                    Space::Z => row[i] * w[i],
                };
            }
            mahalanobis_sum += law.mahalanobis_sq(&x).expect("retained dimension");
        }
        ChunkSummary {
            acc,
            max_residual,
            mahalanobis_sum,
            redraws: chunk.redraws,
        }
    });

    let mut acc = MomentAccumulator::new(n);
    let mut max_residual: f64 = 0.0;
    let mut mahalanobis_sum = 0.0;
    let mut redraws = 0;
    for s in &summaries {
        acc.merge(&s.acc);
        max_residual = max_residual.max(s.max_residual);
        mahalanobis_sum += s.mahalanobis_sum;
        redraws += s.redraws;
    }
    let moments = EmpiricalMoments::from_accumulator(
        &acc,
        count as u64,
        None,
        space,
        seed,
        sampler.method().to_string(),
    )?;
    Ok(SamplerStatistics {
        moments,
        max_residual,
        mahalanobis_mean: mahalanobis_sum / count as f64,
        redraws,
    })
}

/// `m4 / m2²` of one coordinate divided by the Normal value 3.
pub fn kurtosis_ratio(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d = (v - mean) * (v - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::condition_on_weighted_sum;
    use crate::sampler::{sample_naive_last_coord, sample_naive_rescale, Method};

    fn weights(w: &[f64]) -> WeightVector {
        WeightVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn dense_oracle_examples() {
        let (m, c) = dense_conditioning_oracle(&weights(&[1.0, 1.0]), 0.0);
        assert_eq!(m, vec![0.0, 0.0]);
        for (i, j, v) in [(0, 0, 0.5), (0, 1, -0.5), (1, 0, -0.5), (1, 1, 0.5)] {
            assert!((c[(i, j)] - v).abs() < 1e-15);
        }

        let (m, c) = dense_conditioning_oracle(&weights(&[1.0, 2.0, 3.0]), 6.0);
        for (got, want) in m.iter().zip([3.0 / 7.0, 12.0 / 7.0, 27.0 / 7.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        for (i, want) in [13.0 / 14.0, 20.0 / 7.0, 45.0 / 14.0].iter().enumerate() {
            assert!((c[(i, i)] - want).abs() < 1e-14);
        }

        let (m, _) = dense_conditioning_oracle(&weights(&[3.0, 4.0]), 5.0);
        assert!((m[0] - 9.0 / 5.0).abs() < 1e-14 && (m[1] - 16.0 / 5.0).abs() < 1e-14);
        let (mu2, _) = crate::law::bivariate_law(3.0, 4.0, 5.0).unwrap();
        assert!((m[0] - mu2).abs() < 1e-14);
    }

    #[test]
    fn dense_oracle_agrees_with_law() {
        let law =
            condition_on_weighted_sum(&weights(&[0.4, -3.0, 1.1, 7.5, -0.02]), 2.5, None).unwrap();
        let report = check_against_dense_oracle(&law);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn slice_oracle_symmetric_case() {
        let w = weights(&[1.0, 1.0]);
        let m = slice_oracle(&w, 0.0, 0.01, 10_000_000, 1).unwrap();
        let se = (m.covariance[(0, 0)] / m.count as f64).sqrt();
        assert!(m.mean[0].abs() <= 4.0 * se);
        let expected = expected_acceptance_rate(&w, 0.0, 0.01);
        assert!((m.acceptance_rate() / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn slice_oracle_mean_matches_z_law() {
        let w = weights(&[1.0, 2.0, 3.0]);
        let m = slice_oracle(&w, 6.0, 0.02, 10_000_000, 2).unwrap();
        for (i, want) in [3.0 / 7.0, 6.0 / 7.0, 9.0 / 7.0].iter().enumerate() {
            let se = (m.covariance[(i, i)] / m.count as f64).sqrt();
            assert!((m.mean[i] - want).abs() <= 4.0 * se, "coordinate {i}");
        }
    }

    #[test]
    fn halving_epsilon_halves_acceptance() {
        let w = weights(&[1.0, 2.0, 3.0]);
        let wide = slice_oracle(&w, 6.0, 0.04, 10_000_000, 3).unwrap();
        let narrow = slice_oracle(&w, 6.0, 0.02, 10_000_000, 3).unwrap();
        let ratio = narrow.count as f64 / wide.count as f64;
        assert!((0.4..=0.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn slice_oracle_preconditions() {
        let w = weights(&[1.0, 1.0]);
        assert!(matches!(slice_oracle(&w, 0.0, 0.01, 100, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(slice_oracle(&w, 0.0, 0.0, 100_000, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            slice_oracle(&w, 30.0, 0.01, 10_000, 1),
            Err(Error::TooFewAccepted { .. })
        ));
    }

    #[test]
    fn slice_oracle_is_deterministic() {
        let w = weights(&[1.0, 2.0]);
        let a = slice_oracle_chunked(&w, 1.0, 0.05, 50_000, 9, 1000).unwrap();
        let b = slice_oracle_chunked(&w, 1.0, 0.05, 50_000, 9, 1000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn injected_analytic_moments_score_zero() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, None).unwrap();
        let (mean, cov) = law.z_space_full();
        let empirical = EmpiricalMoments {
            mean,
            covariance: cov,
            count: 1000,
            proposals: 1000,
            band: None,
            space: Space::Z,
            seed: 0,
            source: "injected".into(),
        };
        let report = compare(&law, &empirical, Thresholds::uniform(5.0)).unwrap();
        assert!(report.passed());
        assert!(report.max_abs_z_mean < 1e-8 && report.max_abs_z_covariance < 1e-8);
        assert_eq!(report.coordinates, vec![0, 1]);
    }

    #[test]
    fn exact_batch_passes_naive_batch_fails() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0]), 0.0, None).unwrap();
        let exact = Sampler::exact(&law).unwrap();
        let stats = sampler_statistics(&exact, &law, 1_000_000, 5, Space::X).unwrap();
        let report = compare(&law, &stats.moments, Thresholds::uniform(5.0)).unwrap();
        assert!(report.passed(), "{report:?}");

        let naive = sample_naive_last_coord(law.weights(), 0.0, 1_000_000, 5).unwrap();
        let m = EmpiricalMoments::from_batch(&naive).unwrap();
        let report = compare(&law, &m, Thresholds::uniform(5.0)).unwrap();
        assert!(!report.passed());
        assert!(report.covariance_z[0][0] > 5.0);
    }

    #[test]
    fn compare_rejects_bad_shapes() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, None).unwrap();
        let empirical = EmpiricalMoments {
            mean: vec![0.0; 4],
            covariance: DMatrix::zeros(4, 4),
            count: 10,
            proposals: 10,
            band: None,
            space: Space::Z,
            seed: 0,
            source: "bad".into(),
        };
        assert!(matches!(
            compare(&law, &empirical, Thresholds::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let empirical = EmpiricalMoments {
            mean: vec![0.0; 3],
            covariance: DMatrix::zeros(3, 3),
            count: 1,
            ..empirical
        };
        assert!(matches!(
            compare(&law, &empirical, Thresholds::default()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn rescale_kurtosis_is_heavy() {
        let w = weights(&[1.0, 1.0]);
        let law = condition_on_weighted_sum(&w, 1.0, None).unwrap();
        let rescaled = sample_naive_rescale(&w, 1.0, 200_000, 6).unwrap();
        let exact = Sampler::for_law(Method::Exact, &law)
            .unwrap()
            .sample(200_000, 6, Space::Z)
            .unwrap();
        let heavy = kurtosis_ratio(&rescaled.column(0));
        let normal = kurtosis_ratio(&exact.column(0));
        assert!((normal - 1.0).abs() < 0.05, "{normal}");
        assert!(heavy > 10.0, "{heavy}");
    }

    #[test]
    fn report_serializes_deterministically() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0]), 1.0, None).unwrap();
        let run = || {
            let m = slice_oracle_chunked(law.weights(), 1.0, 0.05, 50_000, 4, 4096).unwrap();
            compare(&law, &m, Thresholds::default()).unwrap().to_json()
        };
        assert_eq!(run(), run());
        assert!(!run().contains("wall_time_ms"));
    }
}
