//! Robust batch image alignment by low-rank + sparse decomposition.
//!
//! Two inner solvers share one pipeline: plain linearized nuclear-norm ADMM
//! and a manifold-constrained variant that projects every iterate onto a
//! geodesic neighbor-preserving embedding learned from the batch.

pub mod data;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod manifold;
pub mod ops;
pub mod solver;

pub use error::{LrdError, Result};
pub use exec::Execution;
pub use ops::DenseMatrix;
