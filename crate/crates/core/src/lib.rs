//! Exact conditional law of an i.i.d. standard Normal vector `Z` given a
//! weighted-sum constraint `w'Z = c`, together with samplers and
//! independent verification tooling.
//!
//! * [`structured`]: algebra of `diag(a) + a_0 1 1'` matrices.
//! * [`law`]: the (n−1)-dimensional conditional Normal.
//! * [`sampler`]: exact and naive samplers on the constraint hyperplane.
//! * [`verifier`]: Monte Carlo and dense-algebra oracles plus moment reports.
//! * [`credit`]: one-factor Gaussian-copula default update.

pub mod credit;
pub mod error;
pub mod export;
pub mod law;
pub mod moments;
pub mod sampler;
pub mod structured;
pub mod verifier;

pub use error::{Error, Result};
pub use law::{
    bivariate_law, condition_on_weighted_sum, marginal_sum_density, ConditionalGaussian,
    FullSpacePoint, Space, WeightVector,
};
pub use sampler::{Method, SampleBatch, Sampler};
pub use structured::{DiagPlusConstant, StructuredInverse};
