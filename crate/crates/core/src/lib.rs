//! Transport quasi-Monte Carlo.
//!
//! Trains monotone triangular transport maps that push the uniform
//! distribution on `[0,1]^d` forward to a differentiable, possibly
//! unnormalized target density, then estimates expectations under the
//! target with scrambled Sobol points and self-normalized importance
//! weights.
//!
//! The pipeline is
//!
//! ```text
//! u ∈ [0,1)^d  --G = F⁻¹-->  x⁰  --τ¹-->  x¹  ...  --τᴷ-->  xᴷ  (--V-->  x)
//! ```
//!
//! where every layer is `τᵏ(x) = Tᵏ(Lᵏx + bᵏ)` with `Lᵏ` lower triangular and
//! `Tᵏ` an elementwise monotone map built from a mixture of Beta CDFs.
//!
//! Modules:
//!
//! * [`lowdisc`]: Sobol nets, Owen scrambling, digital shifts, MC points.
//! * [`specfun`]: normal/logistic CDFs and quantiles, log-gamma, incomplete beta.
//! * [`linalg`]: small dense kernels (triangular products, Cholesky, Jacobi).
//! * [`flow`]: the transport map, its log-determinant, gradients and inverse.
//! * [`targets`]: target densities (Gaussian, banana, Bayesian logistic regression).
//! * [`train`]: reverse-KL objective, L-BFGS and multi-restart fitting.
//! * [`subspace`]: relative-score PCA and split maps.
//! * [`estimate`]: IS/SNIS estimators, ESS, proposals and the MSE benchmark.

pub mod error;
pub mod estimate;
pub mod flow;
pub mod linalg;
pub mod lowdisc;
pub mod rng;
pub mod specfun;
pub mod subspace;
pub mod targets;
pub mod train;

mod sum;

pub use error::{Error, Result};
pub use sum::pairwise_sum;
