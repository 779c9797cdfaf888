//! Distributed generalized Nash equilibrium seeking for aggregative games
//! over communication networks.
//!
//! Agents run a preconditioned forward-backward iteration that tracks the
//! aggregate with local estimates `u_i`, keeps local copies `λ_i` of the
//! coupling multiplier, and reaches consensus on both through neighbor
//! exchanges only.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod error;
pub mod game;
pub mod graph;
pub mod kkt;
pub mod params;
pub mod solver;
pub mod splitting;

pub use error::{GneError, Result};
pub use game::{AggregativeGame, GameConstants, GradientOracle, QuadraticCosts};
pub use graph::{build_graph, CommGraph, Laplacian, Topology};
pub use params::{certify, AlgorithmParams, CertificateReport, CertifySpec};

/// Dense column vector of stacked agent blocks.
pub type Vector = nalgebra::DVector<f64>;
