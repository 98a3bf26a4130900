//! Simulation and numerics for continuous-time vertex-reinforced random
//! walks and their discrete-time counterparts.

pub mod acceptance;
pub mod chain;
pub mod diagnostics;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod sampling;
pub mod scalar;
pub mod stats;
pub mod walkers;

pub use linalg::Matrix;

pub type Matrix64 = Matrix<f64>;
pub type ExactMatrix = Matrix<num_rational::BigRational>;
pub type ChainMatrices64 = chain::ChainMatrices<f64>;
