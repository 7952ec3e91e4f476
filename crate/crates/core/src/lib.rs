//! Solver for potential mean-field games on finite weighted graphs via
//! initial-value optimization.
//!
//! The initial value function S₀ is produced by a small trainable model, the
//! coupled Hamilton–Jacobi / continuity system is integrated forward with
//! explicit Euler, and the discretized cost is minimized by differentiating
//! through the whole unrolled integration.

pub mod autodiff;
pub mod calculus;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod measures;
pub mod models;
pub mod potentials;
pub mod render;
pub mod runner;
pub mod training;
pub mod unroll;

pub use error::{Error, Result};
