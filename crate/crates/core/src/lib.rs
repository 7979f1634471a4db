//! Federated representation learning with per-client one-class
//! classification, at desk scale.
//!
//! The crate simulates a two-phase protocol. Phase 1 learns a shared
//! encoder over clients that each hold data of a single class: every
//! client aligns two augmented views of its samples and distills toward a
//! fixed prototype issued once by a central mediator, and a weighted
//! parameter average aggregates the round. Phase 2 freezes the encoder
//! and fits one normalizing flow per client on its own latents; the
//! flow's negative log-likelihood is the anomaly score. Evaluation,
//! ablation and scalability harnesses sit on top, with Gaussian and
//! kernel density baselines for comparison.
//!
//! Data-parallel loops (per-client training, scoring, finite-difference
//! sweeps) run on rayon under the default `parallel` feature and fall
//! back to sequential execution without it; results are bit-identical
//! either way.

pub mod augment;
pub mod baselines;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod flow;
pub mod gradcheck;
pub mod losses;
pub mod mediator;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use tensor::Tensor;

/// Identifies one client in the federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub usize);

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
