//! Ergodic mean-field games on the circle.
//!
//! Solves the stationary MFG system, the social planner and its penalized
//! variants, builds stationary targets for prescribed payoffs, and simulates
//! the N-player game under trigger strategies.

pub mod config;
pub mod error;
pub mod mfg;
pub mod pipeline;
pub mod planner;
pub mod sampling;
pub mod selftest;
pub mod sim;
pub mod target;
pub mod solvers;
pub mod torus;

pub use error::{Error, Result};
