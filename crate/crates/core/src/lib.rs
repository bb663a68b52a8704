//! Equilibria of a finite-horizon public-goods game in which groups play in
//! a random order and observe only a sample of their predecessors'
//! contributions.
//!
//! * [`game`]: configuration, samples, payoffs.
//! * [`analytics`]: closed-form incentive functions and pure thresholds.
//! * [`equilibrium`]: interior maximum, critical return and mixed roots.
//! * [`simulator`]: Monte Carlo play and exact enumeration oracles.
//! * [`cli`]: the command-line front end.

pub mod analytics;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod simulator;

pub use error::{Error, Result};
