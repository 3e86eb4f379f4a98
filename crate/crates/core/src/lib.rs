//! Asynchronous deep Q-learning with a hybrid quantum-classical Q-network
//! and per-worker prioritized replay of short trajectory segments.
//!
//! The crate is organized bottom-up:
//!
//! - [`statevector`]: dense simulator for H, Ry, Rz, general rotations, CNOT
//! - [`circuit`] and [`model`]: the dressed variational circuit, its
//!   classical baseline, and exact gradients
//! - [`optimizer`]: RMSprop
//! - [`replay`]: proportional prioritized replay over trajectories
//! - [`env`]: cart-pole with friction and noise variants
//! - [`agent`]: action selection, TD targets, the all-pairs trajectory loss
//! - [`trainer`]: multi-worker asynchronous training

#![forbid(unsafe_code)]

pub mod agent;
pub mod checkpoint;
pub mod circuit;
pub mod env;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod replay;
pub mod statevector;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Gradient, ModelParams, QNetwork, Variant};
