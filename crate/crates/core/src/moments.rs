//! Streaming mean/covariance accumulation with pairwise merging.

use nalgebra::DMatrix;

/// Running count, mean and co-moment `Σ (x−x̄)(x−x̄)'` of d-dimensional rows.
///
/// Chunks are accumulated independently and combined with [`Self::merge`];
/// folding the chunk accumulators in chunk order gives a result that does not
/// depend on how the chunks were scheduled.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
    delta: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            delta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim());
        let d = self.dim();
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for i in 0..d {
            self.delta[i] = row[i] - self.mean[i];
            self.mean[i] += self.delta[i] * inv;
        }
        // Welford: M += δ_old (x − x̄_new)'
        for i in 0..d {
            let di = self.delta[i];
            for j in 0..d {
                self.comoment[i * d + j] += di * (row[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.clone_from(other);
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..d {
            self.delta[i] = other.mean[i] - self.mean[i];
        }
        let factor = na * nb / n;
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] +=
                    other.comoment[i * d + j] + self.delta[i] * self.delta[j] * factor;
            }
        }
        for i in 0..d {
            self.mean[i] += self.delta[i] * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample covariance; `None` with fewer than two rows.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        if self.count < 2 {
            return None;
        }
        let d = self.dim();
        let scale = 1.0 / (self.count - 1) as f64;
        Some(DMatrix::from_fn(d, d, |i, j| {
            // symmetrize: the two triangles accumulate in different orders
            0.5 * (self.comoment[i * d + j] + self.comoment[j * d + i]) * scale
        }))
    }
}
