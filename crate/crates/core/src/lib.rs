//! Node-level network differential privacy for decentralized gossip averaging.
//!
//! Gossip averaging with additive node-level Gaussian noise is modeled as a
//! discrete-time linear state-space system. The view of an observing node (or
//! set of nodes) over `T` rounds is a projected Gaussian mechanism, whose
//! privacy is governed by the minimum-norm least-squares solution of the
//! observation operator applied to the worst-case perturbation direction.
//! This crate provides:
//!
//! * [`graph`] — communication topologies (Erdős–Rényi, SNAP-style edge lists),
//! * [`mixing`] — gossip matrices built from a graph (max-degree, neighborhood averaging),
//! * [`sensitivity`] — the adversary-view sensitivity engine `Δ = ‖H⁺x̃‖₂`,
//! * [`accountant`] — exact Gaussian-mechanism `(ε, δ)` conversion and pairwise tables,
//! * [`simulator`] — DP gossip averaging / DP federated averaging for logistic regression,
//! * [`verification`] — independent numerical oracles (quadrature, Monte Carlo, brute force).

pub mod accountant;
pub mod config;
pub mod error;
pub mod graph;
pub mod mixing;
pub mod sensitivity;
pub mod simulator;
pub mod verification;

pub use config::EngineConfig;
pub use error::{NetDpError, Result};
