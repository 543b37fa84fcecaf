//! Optimal portfolio selection for a regular-saving investor.
//!
//! The optimal weights solve a family of simplex-constrained quadratic
//! programs indexed by a risk-aversion level `φ`. The level itself evolves by
//! a nonlinear parabolic equation in log-wealth and time. This crate builds
//! the QP value table, solves that equation, reconstructs the value function,
//! simulates wealth under the optimal feedback and reports tail-risk measures.

pub mod alpha;
pub mod config;
pub mod error;
pub mod market;
pub mod pde;
pub mod pipeline;
pub mod risk;
pub mod simulation;
pub mod utility;
pub mod value;

pub use alpha::{AlphaTable, QpSettings, QpSolution};
pub use error::{Error, ErrorKind, Result};
pub use market::{MarketOptions, MarketSpec};
pub use pde::{BoundaryKind, GridSpec, PdeSolver, PhiField};
pub use risk::RiskReport;
pub use simulation::{SimConfig, SimulationBatch};
pub use utility::UtilitySpec;
pub use value::ValueField;
