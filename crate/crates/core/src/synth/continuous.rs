use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{Dims, JointPmf};
use crate::ingest::{threshold_regularize, Manifest, Pooling, SampleRecord};

/// How the label depends on the two latent bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// `Y = b1 xor b2`.
    Synergy,
    /// Both sources see the same bit and `Y` equals it.
    Redundancy,
    /// `Y = b1`.
    Unique1,
    /// `Y = b2`.
    Unique2,
    /// `Y` is a third independent bit.
    Independent,
}

impl Structure {
    pub const ALL: [Structure; 5] = [
        Structure::Synergy,
        Structure::Redundancy,
        Structure::Unique1,
        Structure::Unique2,
        Structure::Independent,
    ];
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Synergy => "synergy",
            Structure::Redundancy => "redundancy",
            Structure::Unique1 => "unique1",
            Structure::Unique2 => "unique2",
            Structure::Independent => "independent",
        })
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|v| v.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::format(format!("unknown structure '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub structure: Structure,
    /// Feature width of each source.
    pub dim: usize,
    /// Distance between the two cluster centres along every axis.
    pub cluster_separation: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl ContinuousSpec {
    pub fn new(structure: Structure, n_samples: usize, seed: u64) -> Self {
        ContinuousSpec {
            structure,
            dim: 4,
            cluster_separation: 2.0,
            n_samples,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_samples == 0 {
            return Err(Error::domain("dim and n_samples must be positive"));
        }
        if !self.cluster_separation.is_finite() || self.cluster_separation < 0.0 {
            return Err(Error::domain(format!(
                "cluster separation {} must be finite and >= 0",
                self.cluster_separation
            )));
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        format!("synth-{}", self.structure)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Draws a cluster sample for bit `b` and returns it with the log-odds of `b = 1`.
fn draw(rng: &mut ChaCha8Rng, b: bool, dim: usize, sep: f64) -> (Vec<f64>, f64) {
    let centre = if b { sep / 2.0 } else { -sep / 2.0 };
    let x: Vec<f64> = (0..dim)
        .map(|_| centre + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let logit = sep * x.iter().sum::<f64>();
    (x, logit)
}

/// Seeded two-cluster records whose score fields are the exact generating
/// conditionals `P(Y | x1, x2)`, `P(Y | x1)` and `P(Y | x2)` over `K = 2`.
pub fn gen_continuous(spec: &ContinuousSpec) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dim, sep) = (spec.dim, spec.cluster_separation);
    let dataset = spec.dataset_name();
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let b1 = rng.random::<bool>();
        let b2 = if spec.structure == Structure::Redundancy { b1 } else { rng.random::<bool>() };
        let b3 = rng.random::<bool>();
        let (x1, l1) = draw(&mut rng, b1, dim, sep);
        let (x2, l2) = draw(&mut rng, b2, dim, sep);
        let (q1, q2) = (sigmoid(l1), sigmoid(l2));
        // Probability that Y = 1 under each probe.
        let (y, p_mm, p_v, p_t) = match spec.structure {
            Structure::Synergy => (b1 ^ b2, q1 * (1.0 - q2) + (1.0 - q1) * q2, 0.5, 0.5),
            Structure::Redundancy => (b1, sigmoid(l1 + l2), q1, q2),
            Structure::Unique1 => (b1, q1, q1, 0.5),
            Structure::Unique2 => (b2, q2, 0.5, q2),
            Structure::Independent => (b3, 0.5, 0.5, 0.5),
        };
        let pair = |p: f64| vec![1.0 - p, p];
        let argmax = |p: f64| usize::from(p > 0.5);
        out.push(SampleRecord {
            id: format!("{dataset}-{i:06}"),
            dataset: dataset.clone(),
            model: "generator".into(),
            layer: None,
            checkpoint: None,
            x1,
            x2,
            scores_mm: pair(p_mm),
            scores_v: pair(p_v),
            scores_t: pair(p_t),
            gold: Some(usize::from(y)),
            pred: Some(argmax(p_mm)),
            pred_text_only: Some(argmax(p_t)),
            tokens: None,
        });
    }
    Ok(out)
}

/// Manifest matching [`gen_continuous`] output.
pub fn continuous_manifest(spec: &ContinuousSpec) -> Manifest {
    Manifest {
        dataset: spec.dataset_name(),
        model: "generator".into(),
        k: 2,
        dim_vision: spec.dim,
        dim_text: spec.dim,
        pooling: Pooling::Mean,
        export_tool_version: concat!("pidlens ", env!("CARGO_PKG_VERSION")).into(),
        family: None,
        size_b: None,
        regime: None,
        feature_sidecar: None,
    }
}

/// One bit per source: each coordinate is split at its pool median and the
/// bit is the majority side, ties going to the side of the summed deviation.
fn binarize(rows: &[&[f64]]) -> Vec<usize> {
    let dim = rows[0].len();
    let medians: Vec<f64> = (0..dim)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                0.5 * (col[n / 2 - 1] + col[n / 2])
            }
        })
        .collect();
    rows.iter()
        .map(|r| {
            let above = r.iter().zip(&medians).filter(|(x, m)| x > m).count();
            let below = r.iter().zip(&medians).filter(|(x, m)| x < m).count();
            match above.cmp(&below) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => 0,
                std::cmp::Ordering::Equal => {
                    let dev: f64 = r.iter().zip(&medians).map(|(x, m)| x - m).sum();
                    usize::from(dev > 0.0)
                }
            }
        })
        .collect()
}

/// 2 x 2 x K joint of the binarized sources and the thresholded multimodal
/// prediction, each record adding its predictive distribution as soft mass.
pub fn discretized_joint(records: &[SampleRecord], tau: f64) -> Result<JointPmf> {
    let first = records.first().ok_or_else(|| Error::domain("no records to discretize"))?;
    let k = first.scores_mm.len();
    if records.iter().any(|r| r.x1.is_empty() || r.x2.is_empty()) {
        return Err(Error::domain("records carry no features to discretize"));
    }
    let v: Vec<&[f64]> = records.iter().map(|r| r.x1.as_slice()).collect();
    let t: Vec<&[f64]> = records.iter().map(|r| r.x2.as_slice()).collect();
    let (bv, bt) = (binarize(&v), binarize(&t));
    let dims = Dims::new(2, 2, k);
    let mut w = vec![0.0; dims.len()];
    for (i, r) in records.iter().enumerate() {
        let pred = threshold_regularize(&r.scores_mm, tau)?;
        if pred.probs.len() != k {
            return Err(Error::domain("records disagree on the number of options"));
        }
        for (y, p) in pred.probs.probs().iter().enumerate() {
            w[dims.index(bv[i], bt[i], y)] += p;
        }
    }
    JointPmf::from_weights(dims, w)
}
