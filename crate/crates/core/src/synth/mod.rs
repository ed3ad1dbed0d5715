//! Ground-truth generators and the exhaustive reference decomposition.

pub mod continuous;
pub mod gates;
pub mod oracle;

pub use gates::{gate_joint, sample_gate, Gate, GateSpec};
pub use oracle::brute_force_pid;
pub use continuous::{continuous_manifest, discretized_joint, gen_continuous, ContinuousSpec, Structure};
