//! Spectral laboratory for the accelerated exponential Euler (AEE) method
//! applied to semilinear parabolic SPDEs with additive Q-Wiener noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral`]: the diagonal Dirichlet Laplacian, its semigroup and the
//!   collocation sine transform;
//! - [`nemytskii`]: pointwise nonlinearities, their derivatives and the
//!   noise covariance;
//! - [`noise`]: exact, path-coupled sampling of Brownian increments and
//!   stochastic convolutions;
//! - [`integrators`]: the AEE scheme, the fine-grid reference, the limit
//!   error equation and their finite-dimensional (SODE) counterparts;
//! - [`oracles`]: Gaussian moment oracles for linear drifts;
//! - [`lab`]: Monte Carlo ensembles, statistics and reports.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod integrators;
pub mod lab;
pub mod nemytskii;
pub mod noise;
pub mod oracles;
pub mod spectral;

pub use error::{LabError, Result};
