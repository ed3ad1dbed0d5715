//! Partial information decomposition of two-source decision processes.

pub mod analysis;
pub mod batch;
pub mod error;
pub mod ingest;
pub mod info;
pub mod sinkhorn;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use info::{Axis, Dims, JointPmf, Pmf};
pub use solver::{Decomposition, PidAtoms, SolveOptions};
