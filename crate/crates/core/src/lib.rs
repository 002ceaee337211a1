//! Offline metalearning for bandwidth-estimator selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`trace`]: synthetic link traces and their text file format.
//! - [`sim`]: 60 ms tick fluid-queue simulation of a two-minute media call.
//! - [`bwe`]: the estimator pool that drives the sender.
//! - [`qoe`]: deterministic video/audio MOS proxy.
//! - [`meta`]: state construction, baseline metapolicies, QoS utilities and the
//!   offline dataset format.
//! - [`rl`]: multilayer perceptrons with hand-written backpropagation and
//!   Implicit Q-Learning.
//! - [`eval`]: paired A/B harness, confidence intervals and Welch tests.
//!
//! Numerical kernels (networks, statistics, QoE, utilities) are generic over
//! [`Scalar`]; the aliases below fix the precisions used by the pipeline.

pub mod bwe;
pub mod error;
pub mod eval;
pub mod meta;
pub mod qoe;
pub mod rl;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Network parameters in the precision used for training and checkpoints.
pub type Mlp32 = rl::Mlp<f32>;
/// Double-precision networks, used for finite-difference gradient checks.
pub type Mlp64 = rl::Mlp<f64>;
/// The four IQL networks in training precision.
pub type IqlNets32 = rl::IqlNets<f32>;
/// Double-precision IQL networks.
pub type IqlNets64 = rl::IqlNets<f64>;
/// Trained metapolicy checkpoint.
pub type Checkpoint = rl::Checkpoint;
