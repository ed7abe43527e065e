//! Symmetric matrices of the form `A_ij = a_i δ_ij + a_0` with every `a_k > 0`.
//!
//! Such a matrix is a positive diagonal plus a positive constant matrix, so it
//! is always positive definite. Its determinant and inverse have closed forms
//! in terms of
//!
//! ```text
//! π(m) = a_0 a_1 ... a_m        s(m) = 1/a_0 + 1/a_1 + ... + 1/a_m
//! |A|  = π(m) s(m)
//! B_ii = (a_i s - 1) / (a_i² s)      B_ij = -1 / (a_i a_j s)   (i ≠ j)
//! ```
//!
//! Every operation here is O(m); only [`DiagPlusConstant::to_dense`] and
//! [`StructuredInverse::to_dense`] allocate O(m²) and exist for testing and
//! reporting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `A_ij = a_i δ_ij + a_0`, stored as `(a_0, [a_1, ..., a_m])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagPlusConstant {
    a0: f64,
    diag: Vec<f64>,
}

fn check_entry(index: usize, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveEntry { index, value })
    }
}

/// Candidate-parameter check; positive definiteness holds exactly when the
/// structural hypothesis `a_k > 0` does.
pub fn is_positive_definite(a0: f64, diag: &[f64]) -> bool {
    !diag.is_empty()
        && check_entry(0, a0).is_ok()
        && diag.iter().all(|&a| a.is_finite() && a > 0.0)
}

impl DiagPlusConstant {
    /// Validates `a_0` and the diagonal. Error indices follow the `a_k`
    /// numbering, so `a_0` is index 0 and `diag[i]` is index `i + 1`.
    pub fn new(a0: f64, diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        check_entry(0, a0)?;
        for (i, &a) in diag.iter().enumerate() {
            check_entry(i + 1, a)?;
        }
        Ok(Self { a0, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i] + self.a0
        } else {
            self.a0
        }
    }

    /// `s(m) = Σ_{k=0}^m 1/a_k`, summed left to right starting at `a_0`.
    pub fn reciprocal_sum(&self) -> f64 {
        self.diag.iter().fold(1.0 / self.a0, |acc, a| acc + 1.0 / a)
    }

    /// `log |A| = Σ log a_k + log s(m)`.
    pub fn log_determinant(&self) -> f64 {
        let log_prod: f64 = self.a0.ln() + self.diag.iter().map(|a| a.ln()).sum::<f64>();
        log_prod + self.reciprocal_sum().ln()
    }

    /// `|A| = π(m) s(m)`; overflows to infinity (or underflows to zero) when
    /// the value is not representable. Prefer [`Self::log_determinant`].
    pub fn determinant(&self) -> f64 {
        let prod = self.diag.iter().fold(self.a0, |acc, a| acc * a);
        if prod.is_normal() {
            prod * self.reciprocal_sum()
        } else {
            self.log_determinant().exp()
        }
    }

    /// `|A|` from the leading-minor recursion, rounded once at the end.
    pub fn determinant_recursive(&self) -> Result<f64> {
        self.recursion().map(|d| d.value())
    }

    /// Log-determinant via the leading-minor recursion
    /// `|A(k+1)| = a_{k+1} |A(k)| + π(k)`, starting from `|A(1)| = a_1 + a_0`.
    ///
    /// Intermediate values are carried as a (mantissa, power-of-two) pair so
    /// the recursion never leaves the representable range.
    pub fn log_determinant_recursive(&self) -> Result<f64> {
        self.recursion().map(|d| d.ln())
    }

    fn recursion(&self) -> Result<Scaled> {
        let mut det = Scaled::new(self.diag[0] + self.a0);
        let mut prod = Scaled::new(self.a0).scale(self.diag[0]);
        for &a in &self.diag[1..] {
            det = det.scale(a).add(prod);
            prod = prod.scale(a);
            if !det.is_finite() || !prod.is_finite() {
                return Err(Error::Overflow);
            }
        }
        Ok(det)
    }

    /// `A x` in O(m).
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let total: f64 = x.iter().sum();
        Ok(self
            .diag
            .iter()
            .zip(x)
            .map(|(a, xi)| a * xi + self.a0 * total)
            .collect())
    }

    /// `x' A x = Σ a_i x_i² + a_0 (Σ x_i)²` in O(m).
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        let total: f64 = x.iter().sum();
        let diag_part: f64 = self.diag.iter().zip(x).map(|(a, xi)| a * xi * xi).sum();
        Ok(diag_part + self.a0 * total * total)
    }

    pub fn inverse(&self) -> StructuredInverse {
        let inv_diag: Vec<f64> = self.diag.iter().map(|a| 1.0 / a).collect();
        let inv_a0 = 1.0 / self.a0;
        let s = inv_diag.iter().fold(inv_a0, |acc, u| acc + u);

        // s - 1/a_i without cancellation: 1/a_0 + prefix + suffix.
        let m = inv_diag.len();
        let mut suffix = vec![0.0; m + 1];
        for i in (0..m).rev() {
            suffix[i] = suffix[i + 1] + inv_diag[i];
        }
        let mut prefix = 0.0;
        let mut complement = Vec::with_capacity(m);
        for i in 0..m {
            complement.push(inv_a0 + prefix + suffix[i + 1]);
            prefix += inv_diag[i];
        }

        StructuredInverse {
            inv_diag,
            complement,
            s,
        }
    }

    /// Solves `A x = b` through the closed-form inverse.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let inv = self.inverse();
        inv.mul_vec(b)
    }

    /// Dense O(m²) copy.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| self.entry(i, j))
    }

    fn check_len(&self, found: usize) -> Result<()> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            })
        }
    }
}

/// Closed-form inverse `B = diag(1/a) - (1/s) u u'` with `u_i = 1/a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredInverse {
    inv_diag: Vec<f64>,
    /// `s - 1/a_i`, accumulated from the other terms.
    complement: Vec<f64>,
    s: f64,
}

impl StructuredInverse {
    pub fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    pub fn reciprocal_sum(&self) -> f64 {
        self.s
    }

    pub fn inv_diag(&self) -> &[f64] {
        &self.inv_diag
    }

    /// `B_ii = (a_i s - 1)/(a_i² s)`, `B_ij = -1/(a_i a_j s)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            // (a_i s - 1)/(a_i² s) == (s - 1/a_i) / (a_i s)
            self.complement[i] * self.inv_diag[i] / self.s
        } else {
            -(self.inv_diag[i] * self.inv_diag[j]) / self.s
        }
    }

    pub fn mul_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: b.len(),
            });
        }
        let weighted: f64 = b.iter().zip(&self.inv_diag).map(|(bi, u)| bi * u).sum();
        let scale = weighted / self.s;
        Ok(b.iter()
            .zip(&self.inv_diag)
            .map(|(bi, u)| bi * u - scale * u)
            .collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| self.entry(i, j))
    }
}

/// `mantissa · 2^exponent`, kept normalized so products of many factors stay
/// representable.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    mantissa: f64,
    exponent: i64,
}

impl Scaled {
    fn new(value: f64) -> Self {
        Self {
            mantissa: value,
            exponent: 0,
        }
        .normalized()
    }

    fn normalized(mut self) -> Self {
        if self.mantissa == 0.0 || !self.mantissa.is_finite() {
            return self;
        }
        let shift = self.mantissa.abs().log2().floor() as i32;
        self.mantissa *= 2f64.powi(-shift);
        self.exponent += shift as i64;
        self
    }

    fn scale(self, factor: f64) -> Self {
        let f = Scaled::new(factor);
        Self {
            mantissa: self.mantissa * f.mantissa,
            exponent: self.exponent + f.exponent,
        }
        .normalized()
    }

    fn add(self, other: Self) -> Self {
        let (big, small) = if self.exponent >= other.exponent {
            (self, other)
        } else {
            (other, self)
        };
        let gap = big.exponent - small.exponent;
        // Beyond ~1100 binary orders the smaller term cannot change the sum.
        let addend = if gap > 1100 {
            0.0
        } else {
            small.mantissa * 2f64.powi(-(gap as i32))
        };
        Self {
            mantissa: big.mantissa + addend,
            exponent: big.exponent,
        }
        .normalized()
    }

    fn value(&self) -> f64 {
        let e = self.exponent.clamp(-2200, 2200) as i32;
        libm::ldexp(self.mantissa, e)
    }

    fn is_finite(&self) -> bool {
        self.mantissa.is_finite()
    }

    fn ln(&self) -> f64 {
        self.mantissa.ln() + self.exponent as f64 * std::f64::consts::LN_2
    }
}
