//! Risk-aware reachability analysis for discrete-time stochastic systems.
//!
//! The pipeline discretizes a model onto a state grid, builds a transition
//! kernel, solves a backward recursion over that kernel, and turns the
//! resulting value tables into safe sets that can be audited by Monte Carlo.

pub mod config;
pub mod dp;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod models;
pub mod monte_carlo;
pub mod pipeline;
pub mod risk;
pub mod sets;
pub mod tiny_mdp;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use grid::{Axis, Grid, InterpWeights};
pub use kernel::{build_kernel, TransitionKernel};
pub use risk::{DiscreteDistribution, RiskLevel};
