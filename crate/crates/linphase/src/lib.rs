//! Exact loss-landscape analysis for weight-decay-regularized deep linear
//! networks with stochastic neurons.
//!
//! The crate is organized around one pipeline:
//!
//! - [`datastats`] ingests or synthesizes the second moments of the data;
//! - [`landscape`] evaluates and minimizes the exact 1-D effective loss
//!   over the order parameter `b = ||U||/d0` and exposes the closed forms
//!   derived from it (ridge, critical points, Landau coefficients,
//!   minimizer bounds);
//! - [`oracle`] is the full-parameter ground truth: the exact expected
//!   loss, its analytic gradient, the closed-form minimum family, and a
//!   multistart descent that certifies the 1-D reduction;
//! - [`sweep`] scans the weight decay `gamma`, differentiates the free
//!   energy numerically, and classifies transitions by Ehrenfest order;
//! - [`dynamics`] simulates noisy gradient descent from near-zero
//!   initialization: symmetry breaking, plateaus, barriers, initialization
//!   sensitivity, the `||w||^{D+2}` regularizer fix, and tanh smoke runs.

pub mod datastats;
pub mod dynamics;
pub mod landscape;
pub mod oracle;
mod rng;
pub mod sweep;

pub use datastats::{from_samples, make_synthetic, signal_norms, DataError, MomentData, SignalNorms};
pub use landscape::{Activation, LandscapeError, NetConfig};
pub use oracle::{OracleError, ParamSet};
