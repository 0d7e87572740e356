//! Dynamical low-rank solvers for the Vlasov-Poisson system.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod eulerian;
pub mod field;
pub mod grid;
pub mod hierarchical;
pub mod linalg;
pub mod lowrank;
pub mod propagate;
pub mod runner;
pub mod scenarios;

pub use error::{Error, Result};
