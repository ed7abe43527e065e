//! The law of `X = (w_1 Z_1, ..., w_n Z_n)` given `Σ X_i = c`, with `Z`
//! i.i.d. standard Normal and every `w_i ≠ 0`.
//!
//! Eliminating one coordinate (the pivot `p`) leaves an (n−1)-dimensional
//! Normal over the retained coordinates with
//!
//! ```text
//! μ_i  = c w_i² / ‖w‖²
//! Σ_ii = w_i² (‖w‖² − w_i²) / ‖w‖²          Σ_ij = −w_i² w_j² / ‖w‖²
//! Σ⁻¹  = diag(1/w_i²) + (1/w_p²) 1 1'
//! K    = ‖w‖ / ((2π)^{(n−1)/2} |∏ w_i|)
//! ```
//!
//! The precision is a [`DiagPlusConstant`] with `a_0 = 1/w_p²`. Setting
//! `w_i = 0` would decouple coordinate `i` from the constraint entirely; that
//! limit is rejected rather than handled.


use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structured::DiagPlusConstant;

/// Largest retained dimension for which the dense covariance is stored.
pub const DEFAULT_DENSE_CAP: usize = 10_000;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Which parametrization a full-length vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// `x_i = w_i z_i`, constraint `Σ x_i = c`.
    X,
    /// Standard-Normal coordinates, constraint `w'z = c`.
    Z,
}

/// Nonzero finite weights, at least two of them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
    norm_sq: f64,
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::TooFewWeights {
                required: 2,
                found: w.len(),
            });
        }
        for (index, &value) in w.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteWeight { index, value });
            }
            if value == 0.0 {
                return Err(Error::ZeroWeight { index });
            }
        }
        let norm_sq = w.iter().fold(0.0, |acc, wi| acc + wi * wi);
        Ok(Self { w, norm_sq })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// `‖w‖²`, summed left to right.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// `Σ_{k≠i} w_k²` for every `i`, accumulated without subtracting from
    /// `‖w‖²`.
    pub fn complement_norm_sq(&self) -> Vec<f64> {
        let n = self.w.len();
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + self.w[i] * self.w[i];
        }
        let mut prefix = 0.0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(prefix + suffix[i + 1]);
            prefix += self.w[i] * self.w[i];
        }
        out
    }

    /// Index of the largest `|w_i|` (first one on ties).
    pub fn largest_magnitude(&self) -> usize {
        let mut best = 0;
        for (i, wi) in self.w.iter().enumerate() {
            if wi.abs() > self.w[best].abs() {
                best = i;
            }
        }
        best
    }

    /// `w' z`.
    pub fn dot(&self, z: &[f64]) -> f64 {
        self.w.iter().zip(z).map(|(a, b)| a * b).sum()
    }
}

/// A full-length point on the constraint hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct FullSpacePoint {
    pub values: Vec<f64>,
    pub space: Space,
}

impl FullSpacePoint {
    /// `Σ x_i − c` in X-space, `w'z − c` in Z-space.
    pub fn residual(&self, weights: &WeightVector, c: f64) -> f64 {
        match self.space {
            Space::X => self.values.iter().sum::<f64>() - c,
            Space::Z => weights.dot(&self.values) - c,
        }
    }
}

/// Log of the Normal density `φ(x; mean, sd)`.
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let t = (x - mean) / sd;
    -0.5 * LN_2PI - sd.abs().ln() - 0.5 * t * t
}

/// Density of `Σ X_i = w'Z` at `c`: `φ(c; 0, ‖w‖)`.
pub fn marginal_sum_density(weights: &WeightVector, c: f64) -> f64 {
    normal_log_pdf(c, 0.0, weights.norm_sq().sqrt()).exp()
}

/// Closed form for `n = 2`, conditioning on `X_1 + X_2 = c`: returns the mean
/// and standard deviation of `X_1`.
pub fn bivariate_law(w1: f64, w2: f64, c: f64) -> Result<(f64, f64)> {
    WeightVector::new(vec![w1, w2])?;
    let precision = 1.0 / (w1 * w1) + 1.0 / (w2 * w2);
    let sd = 1.0 / precision.sqrt();
    let mean = c / (w2 * w2 * precision);
    Ok((mean, sd))
}

/// The (n−1)-dimensional conditional Normal over the retained coordinates.
///
/// Retained coordinates keep their original relative order; `mean()[k]` and
/// `sigma()[(k, l)]` refer to original indices `retained()[k]`,
/// `retained()[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    weights: WeightVector,
    c: f64,
    pivot: usize,
    retained: Vec<usize>,
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
    precision: DiagPlusConstant,
    log_norm_const: f64,
}

/// Conditions on `w'Z = c` eliminating `pivot` (0-based), or the coordinate
/// with the largest `|w_i|` when `pivot` is `None`.
pub fn condition_on_weighted_sum(
    weights: &WeightVector,
    c: f64,
    pivot: Option<usize>,
) -> Result<ConditionalGaussian> {
    ConditionalGaussian::new(weights, c, pivot, DEFAULT_DENSE_CAP)
}

impl ConditionalGaussian {
    pub fn new(
        weights: &WeightVector,
        c: f64,
        pivot: Option<usize>,
        dense_cap: usize,
    ) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("c must be finite, got {c}")));
        }
        let n = weights.len();
        let pivot = match pivot {
            Some(p) if p >= n => return Err(Error::BadPivot { pivot: p, n }),
            Some(p) => p,
            None => weights.largest_magnitude(),
        };
        if n - 1 > dense_cap {
            return Err(Error::TooLarge {
                dim: n - 1,
                cap: dense_cap,
            });
        }

        let w = weights.as_slice();
        let norm_sq = weights.norm_sq();
        let complement = weights.complement_norm_sq();
        let retained: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
        let sq: Vec<f64> = retained.iter().map(|&i| w[i] * w[i]).collect();

        let mu = sq.iter().map(|d| c * d / norm_sq).collect();
        let sigma = DMatrix::from_fn(n - 1, n - 1, |k, l| {
            if k == l {
                sq[k] * complement[retained[k]] / norm_sq
            } else {
                -(sq[k] * sq[l]) / norm_sq
            }
        });
        let precision = DiagPlusConstant::new(
            1.0 / (w[pivot] * w[pivot]),
            sq.iter().map(|d| 1.0 / d).collect(),
        )?;

        let log_abs_prod: f64 = w.iter().map(|wi| wi.abs().ln()).sum();
        let log_norm_const = 0.5 * norm_sq.ln() - log_abs_prod - 0.5 * (n - 1) as f64 * LN_2PI;

        Ok(Self {
            weights: weights.clone(),
            c,
            pivot,
            retained,
            mu,
            sigma,
            precision,
            log_norm_const,
        })
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// 0-based index of the eliminated coordinate.
    pub fn pivot(&self) -> usize {
        self.pivot
    }

    /// Original indices of the retained coordinates, ascending.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    /// Retained coordinates followed by the pivot.
    pub fn permutation(&self) -> Vec<usize> {
        let mut p = self.retained.clone();
        p.push(self.pivot);
        p
    }

    /// Dimension of the conditional law, `n − 1`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn precision(&self) -> &DiagPlusConstant {
        &self.precision
    }

    /// `log K`, the log normalizing constant of the conditional density.
    pub fn log_norm_const(&self) -> f64 {
        self.log_norm_const
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            })
        }
    }

    /// `log K − ½ (x−μ)' Σ⁻¹ (x−μ)` over the retained coordinates, in O(n).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        Ok(self.log_norm_const - 0.5 * self.precision.quadratic_form(&centered)?)
    }

    /// Squared Mahalanobis distance `(x−μ)' Σ⁻¹ (x−μ)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        self.precision.quadratic_form(&centered)
    }

    /// Returns `(log_density(x), log joint − log marginal)`: the second value
    /// is Bayes' rule evaluated directly, the product of the independent
    /// `φ(x_i; 0, |w_i|)` (pivot reconstructed from the constraint) divided by
    /// `φ(c; 0, ‖w‖)`.
    pub fn density_self_consistency(&self, x: &[f64]) -> Result<(f64, f64)> {
        let closed = self.log_density(x)?;
        let full = self.lift(x)?;
        let w = self.weights.as_slice();
        let log_joint: f64 = full
            .values
            .iter()
            .zip(w)
            .map(|(xi, wi)| normal_log_pdf(*xi, 0.0, wi.abs()))
            .sum();
        let log_marginal = normal_log_pdf(self.c, 0.0, self.weights.norm_sq().sqrt());
        Ok((closed, log_joint - log_marginal))
    }

    /// Law of the retained Z coordinates: mean `μ_i/w_i`, covariance
    /// `Σ_ij/(w_i w_j)`.
    pub fn z_space_law(&self) -> (Vec<f64>, DMatrix<f64>) {
        let w = self.weights.as_slice();
        let wr: Vec<f64> = self.retained.iter().map(|&i| w[i]).collect();
        let mean = self.mu.iter().zip(&wr).map(|(m, wi)| m / wi).collect();
        let cov = DMatrix::from_fn(self.dim(), self.dim(), |k, l| {
            self.sigma[(k, l)] / (wr[k] * wr[l])
        });
        (mean, cov)
    }

    /// The degenerate n-dimensional Z-space law implied by this law, obtained
    /// by pushing the retained Z law through `z_p = (c − Σ w_r z_r)/w_p`.
    /// Independent of the pivot choice.
    pub fn z_space_full(&self) -> (Vec<f64>, DMatrix<f64>) {
        let (mean_r, cov_r) = self.z_space_law();
        let w = self.weights.as_slice();
        let n = self.weights.len();
        let wp = w[self.pivot];

        let mut map = DMatrix::<f64>::zeros(n, n - 1);
        let mut offset = DVector::<f64>::zeros(n);
        for (k, &i) in self.retained.iter().enumerate() {
            map[(i, k)] = 1.0;
            map[(self.pivot, k)] = -w[i] / wp;
        }
        offset[self.pivot] = self.c / wp;

        let mean = &map * DVector::from_vec(mean_r) + offset;
        let cov = &map * cov_r * map.transpose();
        (mean.iter().copied().collect(), cov)
    }

    /// Rebuilds the full X-space vector in original order, setting
    /// `x_pivot = c − Σ retained x_i`.
    pub fn lift(&self, x: &[f64]) -> Result<FullSpacePoint> {
        let mut values = vec![0.0; self.weights.len()];
        self.lift_into(x, &mut values)?;
        Ok(FullSpacePoint {
            values,
            space: Space::X,
        })
    }

    pub(crate) fn lift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x.len())?;
        let mut total = 0.0;
        for (&i, &xi) in self.retained.iter().zip(x) {
            out[i] = xi;
            total += xi;
        }
        out[self.pivot] = self.c - total;
        Ok(())
    }

    pub fn to_document(&self) -> LawDocument {
        LawDocument {
            weights: self.weights.as_slice().to_vec(),
            c: self.c,
            pivot: self.pivot + 1,
            mu: self.mu.clone(),
            sigma: (0..self.dim())
                .map(|k| self.sigma.row(k).iter().copied().collect())
                .collect(),
            precision: PrecisionDocument {
                a0: self.precision.a0(),
                diag: self.precision.diag().to_vec(),
            },
            log_norm_const: self.log_norm_const,
        }
    }

    /// Restores a law from its document without recomputing any field, so a
    /// save/load cycle is bit-exact.
    pub fn from_document(doc: LawDocument) -> Result<Self> {
        let weights = WeightVector::new(doc.weights)?;
        let n = weights.len();
        if doc.pivot == 0 || doc.pivot > n {
            return Err(Error::BadPivot {
                pivot: doc.pivot.wrapping_sub(1),
                n,
            });
        }
        let pivot = doc.pivot - 1;
        let dim = n - 1;
        let mismatch = |found| Error::DimensionMismatch {
            expected: dim,
            found,
        };
        if doc.mu.len() != dim {
            return Err(mismatch(doc.mu.len()));
        }
        if doc.sigma.len() != dim {
            return Err(mismatch(doc.sigma.len()));
        }
        if let Some(row) = doc.sigma.iter().find(|r| r.len() != dim) {
            return Err(mismatch(row.len()));
        }
        let precision = DiagPlusConstant::new(doc.precision.a0, doc.precision.diag)?;
        if precision.dim() != dim {
            return Err(mismatch(precision.dim()));
        }
        let sigma = DMatrix::from_fn(dim, dim, |k, l| doc.sigma[k][l]);
        Ok(Self {
            weights,
            c: doc.c,
            pivot,
            retained: (0..n).filter(|&i| i != pivot).collect(),
            mu: doc.mu,
            sigma,
            precision,
            log_norm_const: doc.log_norm_const,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("law document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LawDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// JSON form of a [`ConditionalGaussian`]. `pivot` is 1-based and `sigma` is
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawDocument {
    pub weights: Vec<f64>,
    pub c: f64,
    pub pivot: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub precision: PrecisionDocument,
    pub log_norm_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionDocument {
    pub a0: f64,
    pub diag: Vec<f64>,
}

/// `log φ` of an n-dimensional point under `N(mean, cov)`, used by tests that
/// need a density independent of the structured precision.
#[doc(hidden)]
pub fn dense_normal_log_pdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let solved = chol.solve(&d);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * LN_2PI + log_det + d.dot(&solved))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use super::*;

    fn weights(w: &[f64]) -> WeightVector {
        WeightVector::new(w.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    fn assert_matrix(m: &DMatrix<f64>, expected: &[&[f64]], tol: f64) {
        for (i, row) in expected.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!(close(m[(i, j)], *v, tol), "({i},{j}): {} vs {v}", m[(i, j)]);
            }
        }
    }

    #[test]
    fn weight_validation() {
        assert_eq!(
            WeightVector::new(vec![1.0, 0.0, 3.0]),
            Err(Error::ZeroWeight { index: 1 })
        );
        assert!(matches!(
            WeightVector::new(vec![1.0]),
            Err(Error::TooFewWeights { .. })
        ));
        assert!(matches!(
            WeightVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFiniteWeight { index: 1, .. })
        ));
        let w = weights(&[1.0, -2.0, 3.0]);
        assert_eq!(w.norm_sq(), 14.0);
        assert_eq!(w.complement_norm_sq(), vec![13.0, 10.0, 5.0]);
        assert_eq!(w.largest_magnitude(), 2);
    }

    #[test]
    fn zero_weight_message_is_one_based() {
        let err = WeightVector::new(vec![1.0, 0.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("index 2"));
    }

    #[test]
    fn two_equal_weights() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0]), 0.0, Some(1)).unwrap();
        assert_eq!(law.mean(), &[0.0]);
        assert_matrix(law.sigma(), &[&[0.5]], 1e-15);
        assert_matrix(&law.precision().to_dense(), &[&[2.0]], 1e-15);
    }

    #[test]
    fn three_equal_weights() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0, 1.0]), 3.0, Some(2)).unwrap();
        assert!(close(law.mean()[0], 1.0, 1e-15) && close(law.mean()[1], 1.0, 1e-15));
        assert_matrix(
            law.sigma(),
            &[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]],
            1e-15,
        );
    }

    #[test]
    fn unequal_weights() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, Some(2)).unwrap();
        assert!(close(law.mean()[0], 3.0 / 7.0, 1e-15));
        assert!(close(law.mean()[1], 12.0 / 7.0, 1e-15));
        assert_matrix(
            law.sigma(),
            &[&[13.0 / 14.0, -2.0 / 7.0], &[-2.0 / 7.0, 20.0 / 7.0]],
            1e-15,
        );
        let p = law.precision();
        assert!(close(p.a0(), 1.0 / 9.0, 1e-15));
        assert!(close(p.diag()[0], 1.0, 1e-15) && close(p.diag()[1], 0.25, 1e-15));
    }

    #[test]
    fn default_pivot_is_largest_weight() {
        let law = condition_on_weighted_sum(&weights(&[1.0, -5.0, 3.0]), 1.0, None).unwrap();
        assert_eq!(law.pivot(), 1);
        assert_eq!(law.retained(), &[0, 2]);
        assert_eq!(law.permutation(), vec![0, 2, 1]);
    }

    #[test]
    fn bad_pivot_and_cap() {
        assert_eq!(
            condition_on_weighted_sum(&weights(&[1.0, 2.0]), 0.0, Some(2)),
            Err(Error::BadPivot { pivot: 2, n: 2 })
        );
        assert!(matches!(
            ConditionalGaussian::new(&weights(&[1.0, 2.0, 3.0]), 0.0, None, 1),
            Err(Error::TooLarge { dim: 2, cap: 1 })
        ));
        assert!(condition_on_weighted_sum(&weights(&[1.0, 2.0]), f64::NAN, None).is_err());
    }

    #[test]
    fn precision_times_sigma_is_identity() {
        let law =
            condition_on_weighted_sum(&weights(&[0.3, -2.0, 1.7, 4.0, 0.9]), -2.5, None).unwrap();
        let product = law.precision().to_dense() * law.sigma();
        let err = (product - DMatrix::<f64>::identity(4, 4)).amax();
        assert!(err <= 1e-12, "{err}");
        let inv = law.precision().inverse();
        for k in 0..4 {
            for l in 0..4 {
                assert!(close(law.sigma()[(k, l)], inv.entry(k, l), 1e-12));
            }
        }
    }

    #[test]
    fn precision_maps_mean_to_constant_vector() {
        let w = weights(&[0.3, -2.0, 1.7, 4.0, 0.9]);
        let law = condition_on_weighted_sum(&w, 3.5, None).unwrap();
        let wp = w.as_slice()[law.pivot()];
        let target = 3.5 / (wp * wp);
        for v in law.precision().mul_vec(law.mean()).unwrap() {
            assert!((v - target).abs() <= 1e-10);
        }
    }

    #[test]
    fn normalization_matches_lemma_determinant() {
        let w = weights(&[0.3, -2.0, 1.7, 4.0, 0.9]);
        let law = condition_on_weighted_sum(&w, 1.0, None).unwrap();
        let via_lemma = 0.5 * law.precision().log_determinant() - 0.5 * 4.0 * LN_2PI;
        assert!((law.log_norm_const() - via_lemma).abs() <= 1e-12);
        let k = w.norm_sq().sqrt()
            / ((2.0 * PI).powf(2.0) * w.as_slice().iter().product::<f64>().abs());
        assert!(close(law.log_norm_const().exp(), k, 1e-12));
    }

    #[test]
    fn marginal_sum_density_examples() {
        assert!(close(
            marginal_sum_density(&weights(&[1.0, 1.0]), 0.0),
            1.0 / (4.0 * PI).sqrt(),
            1e-15
        ));
        assert!(close(
            marginal_sum_density(&weights(&[1.0, 2.0, 3.0]), 0.0),
            1.0 / (28.0 * PI).sqrt(),
            1e-15
        ));
        assert!(close(
            marginal_sum_density(&weights(&[3.0, 4.0]), 5.0),
            (-0.5f64).exp() / (5.0 * (2.0 * PI).sqrt()),
            1e-15
        ));
    }

    #[test]
    fn log_density_examples() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0]), 0.0, None).unwrap();
        assert!(close(law.log_density(&[0.0]).unwrap(), -0.5 * PI.ln(), 1e-14));

        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0, 1.0]), 3.0, None).unwrap();
        let expected = -0.5 * ((2.0 * PI).powi(2) / 3.0).ln();
        assert!(close(law.log_density(&[1.0, 1.0]).unwrap(), expected, 1e-14));

        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, Some(2)).unwrap();
        let expected = law.log_norm_const() - 0.5 * 10.0 / 7.0;
        assert!(close(law.log_density(&[0.0, 0.0]).unwrap(), expected, 1e-14));
        let dense = dense_normal_log_pdf(&[0.0, 0.0], law.mean(), law.sigma());
        assert!(close(law.log_density(&[0.0, 0.0]).unwrap(), dense, 1e-12));

        assert!(matches!(
            law.log_density(&[0.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn self_consistency_examples() {
        let cases: [(&[f64], f64, &[f64]); 3] = [
            (&[1.0, 1.0], 0.0, &[0.3]),
            (&[1.0, 2.0, 3.0], 6.0, &[0.5, -1.0]),
            (&[2.0, 2.0], 4.0, &[1.0]),
        ];
        for (w, c, x) in cases {
            let law = condition_on_weighted_sum(&weights(w), c, Some(w.len() - 1)).unwrap();
            let (closed, bayes) = law.density_self_consistency(x).unwrap();
            assert!((closed - bayes).abs() <= 1e-10, "{w:?}: {closed} vs {bayes}");
        }
    }

    #[test]
    fn bivariate_examples() {
        let (m, s) = bivariate_law(1.0, 1.0, 0.0).unwrap();
        assert_eq!(m, 0.0);
        assert!(close(s, 0.5f64.sqrt(), 1e-15));
        let (m, s) = bivariate_law(1.0, 1.0, 2.0).unwrap();
        assert!(close(m, 1.0, 1e-15) && close(s, 0.5f64.sqrt(), 1e-15));
        let (m, s) = bivariate_law(1.0, 2.0, 5.0).unwrap();
        assert!(close(m, 1.0, 1e-15) && close(s, 0.8f64.sqrt(), 1e-15));
        assert_eq!(bivariate_law(0.0, 1.0, 1.0), Err(Error::ZeroWeight { index: 0 }));
    }

    #[test]
    fn z_space_examples() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0]), 0.0, None).unwrap();
        let (m, c) = law.z_space_law();
        assert_eq!(m, vec![0.0]);
        assert!(close(c[(0, 0)], 0.5, 1e-15));

        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, Some(2)).unwrap();
        let (m, c) = law.z_space_law();
        assert!(close(m[0], 3.0 / 7.0, 1e-15) && close(m[1], 6.0 / 7.0, 1e-15));
        assert_matrix(&c, &[&[13.0 / 14.0, -1.0 / 7.0], &[-1.0 / 7.0, 5.0 / 7.0]], 1e-15);

        let law = condition_on_weighted_sum(&weights(&[2.0, 2.0]), 4.0, None).unwrap();
        let (m, c) = law.z_space_law();
        assert!(close(m[0], 1.0, 1e-15) && close(c[(0, 0)], 0.5, 1e-15));
    }

    #[test]
    fn lift_examples() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0]), 1.0, Some(1)).unwrap();
        assert_eq!(law.lift(&[0.25]).unwrap().values, vec![0.25, 0.75]);

        let law = condition_on_weighted_sum(&weights(&[1.0, 1.0, 1.0]), 3.0, Some(2)).unwrap();
        assert_eq!(law.lift(&[1.0, 1.0]).unwrap().values, vec![1.0, 1.0, 1.0]);

        let w = weights(&[1.0, 2.0, 3.0]);
        let law = condition_on_weighted_sum(&w, 6.0, Some(0)).unwrap();
        assert_eq!(law.retained(), &[1, 2]);
        let point = law.lift(&[2.5, -1.0]).unwrap();
        assert_eq!(point.values, vec![4.5, 2.5, -1.0]);
        assert!(point.residual(&w, 6.0).abs() <= 1e-12);
    }

    #[test]
    fn pivot_choice_does_not_change_full_law() {
        let w = weights(&[0.5, -1.5, 2.0, 3.0]);
        let c = 1.25;
        let reference = condition_on_weighted_sum(&w, c, Some(0)).unwrap().z_space_full();
        for p in 1..4 {
            let (mean, cov) = condition_on_weighted_sum(&w, c, Some(p)).unwrap().z_space_full();
            for i in 0..4 {
                assert!((mean[i] - reference.0[i]).abs() <= 1e-10);
                for j in 0..4 {
                    assert!((cov[(i, j)] - reference.1[(i, j)]).abs() <= 1e-10);
                }
            }
        }
        // closed form: c w/‖w‖², I − ww'/‖w‖²
        let s = w.norm_sq();
        for i in 0..4 {
            assert!((reference.0[i] - c * w.as_slice()[i] / s).abs() <= 1e-12);
        }
    }

    #[test]
    fn sign_flip_behaviour() {
        let base = weights(&[1.0, 2.0, 3.0, 0.5]);
        let flipped = weights(&[1.0, -2.0, 3.0, 0.5]);
        let a = condition_on_weighted_sum(&base, 2.0, Some(3)).unwrap();
        let b = condition_on_weighted_sum(&flipped, 2.0, Some(3)).unwrap();
        assert_eq!(a.sigma(), b.sigma());
        let (za, _) = a.z_space_law();
        let (zb, _) = b.z_space_law();
        assert_eq!(za[1], -zb[1]);
        assert_eq!(za[0], zb[0]);
    }

    #[test]
    fn covariance_does_not_depend_on_c() {
        let w = weights(&[0.7, 1.1, -2.2]);
        let a = condition_on_weighted_sum(&w, -9.0, None).unwrap();
        let b = condition_on_weighted_sum(&w, 4.0, None).unwrap();
        assert_eq!(a.sigma(), b.sigma());
        assert_eq!(a.precision(), b.precision());
        assert_eq!(a.log_norm_const(), b.log_norm_const());
    }

    #[test]
    fn density_integrates_to_one_in_three_dimensions() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, Some(2)).unwrap();
        let sd: Vec<f64> = (0..2).map(|k| law.sigma()[(k, k)].sqrt()).collect();
        let steps = 400;
        let h: Vec<f64> = sd.iter().map(|s| 16.0 * s / steps as f64).collect();
        let mut total = 0.0;
        for i in 0..=steps {
            let x0 = law.mean()[0] - 8.0 * sd[0] + i as f64 * h[0];
            let wi = if i == 0 || i == steps { 0.5 } else { 1.0 };
            for j in 0..=steps {
                let x1 = law.mean()[1] - 8.0 * sd[1] + j as f64 * h[1];
                let wj = if j == 0 || j == steps { 0.5 } else { 1.0 };
                total += wi * wj * law.log_density(&[x0, x1]).unwrap().exp();
            }
        }
        total *= h[0] * h[1];
        assert!((total - 1.0).abs() <= 1e-6, "{total}");
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let law =
            condition_on_weighted_sum(&weights(&[0.1, -7.3, 2.0 / 3.0]), -1.0 / 7.0, None).unwrap();
        let text = law.to_json();
        let back = ConditionalGaussian::from_json(&text).unwrap();
        assert_eq!(back, law);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn json_layout() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, None).unwrap();
        let text = law.to_json();
        let positions: Vec<usize> =
            ["\"weights\"", "\"c\"", "\"pivot\"", "\"mu\"", "\"sigma\"", "\"precision\"", "\"log_norm_const\""]
                .iter()
                .map(|k| text.find(k).unwrap())
                .collect();
        assert!(positions.windows(2).all(|p| p[0] < p[1]));
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["pivot"], 3);
        assert_eq!(value["mu"][0].as_f64().unwrap(), 0.42857142857142855);
        assert_eq!(value["mu"][1].as_f64().unwrap(), 1.7142857142857142);
    }

    #[test]
    fn from_document_rejects_inconsistent_shapes() {
        let law = condition_on_weighted_sum(&weights(&[1.0, 2.0, 3.0]), 6.0, None).unwrap();
        let mut doc = law.to_document();
        doc.mu.pop();
        assert!(ConditionalGaussian::from_document(doc).is_err());
        let mut doc = law.to_document();
        doc.pivot = 0;
        assert!(ConditionalGaussian::from_document(doc).is_err());
        assert!(ConditionalGaussian::from_json("{").is_err());
    }
}
