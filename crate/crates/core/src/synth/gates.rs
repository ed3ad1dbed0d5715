use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{Dims, JointPmf};

/// Two-bit logic gates with known decompositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Xor,
    And,
    Or,
    /// `X1 = X2 = Y`, a single shared bit.
    Copy,
    /// `Y = X1`, X2 an independent bit.
    Unq1,
    /// `Y = X2`, X1 an independent bit.
    Unq2,
}

impl Gate {
    pub const ALL: [Gate; 6] = [Gate::Xor, Gate::And, Gate::Or, Gate::Copy, Gate::Unq1, Gate::Unq2];

    fn output(self, a: usize, b: usize) -> usize {
        match self {
            Gate::Xor => a ^ b,
            Gate::And => a & b,
            Gate::Or => a | b,
            Gate::Copy | Gate::Unq1 => a,
            Gate::Unq2 => b,
        }
    }

    /// Probability of the source pair `(a, b)`.
    fn source_mass(self, a: usize, b: usize) -> f64 {
        match self {
            Gate::Copy if a != b => 0.0,
            Gate::Copy => 0.5,
            _ => 0.25,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Gate::Xor => "xor",
            Gate::And => "and",
            Gate::Or => "or",
            Gate::Copy => "copy",
            Gate::Unq1 => "unq1",
            Gate::Unq2 => "unq2",
        };
        f.write_str(s)
    }
}

impl FromStr for Gate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xor" => Ok(Gate::Xor),
            "and" => Ok(Gate::And),
            "or" => Ok(Gate::Or),
            "copy" => Ok(Gate::Copy),
            "unq1" => Ok(Gate::Unq1),
            "unq2" => Ok(Gate::Unq2),
            other => Err(Error::format(format!("unknown gate '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub gate: Gate,
    /// Probability that `Y` is flipped; in `[0, 0.5)`.
    pub flip_noise: f64,
    /// Sample count for [`sample_gate`]; unused by the exact joint.
    pub n_samples: usize,
    pub seed: u64,
}

impl GateSpec {
    pub fn exact(gate: Gate, flip_noise: f64) -> Self {
        GateSpec {
            gate,
            flip_noise,
            n_samples: 0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.flip_noise) {
            return Err(Error::domain(format!(
                "flip noise {} outside [0, 0.5)",
                self.flip_noise
            )));
        }
        Ok(())
    }
}

/// Exact 2x2x2 joint of a gate with `Y` flipped at rate `flip_noise`.
pub fn gate_joint(spec: &GateSpec) -> Result<JointPmf> {
    spec.validate()?;
    let eps = spec.flip_noise;
    JointPmf::from_fn(Dims::new(2, 2, 2), |a, b, y| {
        let keep = if spec.gate.output(a, b) == y { 1.0 - eps } else { eps };
        spec.gate.source_mass(a, b) * keep
    })
}

/// Empirical joint of `n_samples` seeded draws from the gate.
pub fn sample_gate(spec: &GateSpec) -> Result<JointPmf> {
    spec.validate()?;
    if spec.n_samples == 0 {
        return Err(Error::domain("sample_gate needs n_samples >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counts = vec![0.0; 8];
    let dims = Dims::new(2, 2, 2);
    for _ in 0..spec.n_samples {
        let a = rng.random_range(0..2);
        let b = if spec.gate == Gate::Copy { a } else { rng.random_range(0..2) };
        let mut y = spec.gate.output(a, b);
        if rng.random::<f64>() < spec.flip_noise {
            y ^= 1;
        }
        counts[dims.index(a, b, y)] += 1.0;
    }
    JointPmf::from_weights(dims, counts)
}
