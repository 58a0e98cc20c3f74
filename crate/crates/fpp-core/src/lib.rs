//! Structural toolkit for asymmetric first-price procurements (FPPs) with
//! CRRA risk aversion and procurement-level unobserved heterogeneity.
//!
//! The crate solves type-symmetric Bayesian Nash equilibria of asymmetric
//! procurements by a boundary-value method, evaluates bid likelihoods through
//! the equilibrium change of variables, runs an adaptive Metropolis-within-Gibbs
//! sampler with data augmentation for the latent cost scale, and simulates
//! counterfactual reserve-price policies (common, type-specific, added bidder,
//! second-price comparison).
//!
//! Everything is deterministic given a 64-bit seed: random streams are named
//! substreams of the seed and parallel reductions are order-fixed, so worker
//! count never changes results.

pub mod basis;
pub mod density;
pub mod equilibrium;
pub mod error;
pub mod identify;
pub mod interp;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod policy;
pub mod quad;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use model::{BidderConfig, CostDensitySpec, DensityKind, Model, ModelParams, PriorSpec, UHSpec};
