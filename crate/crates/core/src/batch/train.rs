use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::info::{pairwise_sum, Pmf, ZERO_MASS};
use crate::ingest::{aggregate_marginal, split_dataset, threshold_regularize, SampleRecord, SplitSpec, DEFAULT_TAU};
use crate::sinkhorn::scale_matrix;
use crate::solver::{atoms_from_information, Decomposition};

use super::mlp::{Adam, Mlp};
use super::model::CouplingModel;
use super::objective::{batch_information, batch_loss_and_grad, EncoderPair, LOGIT_CLAMP};

/// How per-batch Sinkhorn targets are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// `P(x1_i, y)` rows from the vision-only prediction and `P(x2_j, y)`
    /// columns from the text-only one, both balanced to the batch label mass.
    #[default]
    Soft,
    /// Mass `1/n` on `(i, y_i)` with `y_i` drawn once per sample from its
    /// multimodal prediction. Every pair then carries a single label, so the
    /// loss is constant and training leaves the encoders unchanged.
    Sampled,
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::Soft => "soft",
            TargetMode::Sampled => "sampled",
        })
    }
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(TargetMode::Soft),
            "sampled" => Ok(TargetMode::Sampled),
            other => Err(Error::format(format!("unknown target mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub test_batch_size: usize,
    pub hidden: usize,
    /// Width of each per-label embedding row.
    pub embed_dim: usize,
    pub sinkhorn_iters: usize,
    pub logit_clamp: f64,
    /// Confidence threshold applied to every probe's scores.
    pub tau: f64,
    pub targets: TargetMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 8,
            batch_size: 256,
            test_batch_size: 256,
            hidden: 32,
            embed_dim: 32,
            sinkhorn_iters: 100,
            logit_clamp: LOGIT_CLAMP,
            tau: DEFAULT_TAU,
            targets: TargetMode::Soft,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        let positive = [self.epochs, self.batch_size, self.test_batch_size, self.hidden, self.embed_dim, self.sinkhorn_iters];
        if positive.contains(&0) {
            return Err(Error::domain("epochs, batch sizes, widths and sinkhorn_iters must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.logit_clamp > 0.0) {
            return Err(Error::domain("logit clamp must be positive"));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::domain(format!("tau {} must be finite and >= 0", self.tau)));
        }
        if self.batch_size < k {
            return Err(Error::domain(format!("batch size {} is below the label count {k}", self.batch_size)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Regularized predictions of one record under the three probes.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<'a> {
    pub x1: &'a [f64],
    pub x2: &'a [f64],
    pub mm: Vec<f64>,
    pub v: Vec<f64>,
    pub t: Vec<f64>,
}

pub(crate) fn prepare(records: &[SampleRecord], tau: f64) -> Result<Vec<Prepared<'_>>> {
    records
        .par_iter()
        .map(|r| {
            if r.x1.is_empty() || r.x2.is_empty() {
                return Err(Error::domain(format!("record '{}' carries no features", r.id)));
            }
            let reg = |s: &[f64]| threshold_regularize(s, tau).map(|p| p.probs.into_vec());
            Ok(Prepared {
                x1: &r.x1,
                x2: &r.x2,
                mm: reg(&r.scores_mm)?,
                v: reg(&r.scores_v)?,
                t: reg(&r.scores_t)?,
            })
        })
        .collect()
}

/// Rescales an `n x k` table of predictive rows so each row carries `1/n`
/// and label `y` carries `label_mass[y]` in total.
///
/// A `1e-9` floor keeps the scaling feasible when a prediction rules out a
/// label the batch still uses.
pub fn balanced_targets(rows: &[&[f64]], label_mass: &[f64]) -> Vec<f64> {
    let (n, k) = (rows.len(), label_mass.len());
    let mut m: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|v| v + 1e-9)).collect();
    for (y, &mass) in label_mass.iter().enumerate() {
        if mass <= 0.0 {
            for i in 0..n {
                m[i * k + y] = 0.0;
            }
        }
    }
    scale_matrix(&mut m, n, k, &vec![1.0 / n as f64; n], label_mass, 10_000, 1e-15);
    m
}

/// Batch label mass: mean multimodal prediction, exactly normalized.
fn batch_label_mass(batch: &[&Prepared<'_>], k: usize) -> Vec<f64> {
    let mut col = Vec::with_capacity(batch.len());
    let mut mass: Vec<f64> = (0..k)
        .map(|y| {
            col.clear();
            col.extend(batch.iter().map(|p| p.mm[y]));
            pairwise_sum(&col)
        })
        .collect();
    let s: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|v| *v /= s);
    mass
}

fn soft_targets(batch: &[&Prepared<'_>], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mass = batch_label_mass(batch, k);
    let v: Vec<&[f64]> = batch.iter().map(|p| p.v.as_slice()).collect();
    let t: Vec<&[f64]> = batch.iter().map(|p| p.t.as_slice()).collect();
    (balanced_targets(&v, &mass), balanced_targets(&t, &mass))
}

fn sampled_targets(labels: &[usize], k: usize) -> Vec<f64> {
    let n = labels.len();
    let mut t = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        t[i * k + y] = 1.0 / n as f64;
    }
    t
}

fn draw_label(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return y;
        }
    }
    p.len() - 1
}

/// SHA-256 over the records' wire encoding, in order.
pub fn dataset_digest(records: &[SampleRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(serde_json::to_vec(r).expect("record serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Fits the encoders on `records`; `marginal` is the pooled label distribution
/// frozen into the model for later evaluation.
pub fn train(records: &[SampleRecord], marginal: &Pmf, cfg: &TrainConfig) -> Result<CouplingModel> {
    let k = marginal.len();
    cfg.validate(k)?;
    if marginal.probs().iter().filter(|p| **p > ZERO_MASS).count() < 2 {
        return Err(Error::Degenerate("label marginal has fewer than two live labels".into()));
    }
    if records.len() < 2 {
        return Err(Error::domain("training needs at least two records"));
    }
    let data = prepare(records, cfg.tau)?;
    if data.iter().any(|p| p.mm.len() != k) {
        return Err(Error::domain(format!("records disagree with the marginal's {k} labels")));
    }
    let (dv, dt) = (data[0].x1.len(), data[0].x2.len());
    if data.iter().any(|p| p.x1.len() != dv || p.x2.len() != dt) {
        return Err(Error::format("feature widths differ across records"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc = EncoderPair {
        vision: Mlp::init(dv, cfg.hidden, k * cfg.embed_dim, &mut rng),
        text: Mlp::init(dt, cfg.hidden, k * cfg.embed_dim, &mut rng),
        embed_dim: cfg.embed_dim,
        k,
    };
    let labels: Vec<usize> = match cfg.targets {
        TargetMode::Sampled => data.iter().map(|p| draw_label(&p.mm, &mut rng)).collect(),
        TargetMode::Soft => Vec::new(),
    };
    let mut opt_v = Adam::new(enc.vision.params.len(), cfg.learning_rate);
    let mut opt_t = Adam::new(enc.text.params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared<'_>> = chunk.iter().map(|&i| &data[i]).collect();
            let x1: Vec<&[f64]> = batch.iter().map(|p| p.x1).collect();
            let x2: Vec<&[f64]> = batch.iter().map(|p| p.x2).collect();
            let (rows, cols) = match cfg.targets {
                TargetMode::Soft => soft_targets(&batch, k),
                TargetMode::Sampled => {
                    let l: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    let t = sampled_targets(&l, k);
                    (t.clone(), t)
                }
            };
            let g = batch_loss_and_grad(&enc, &x1, &x2, &rows, &cols, cfg.sinkhorn_iters, cfg.logit_clamp)
                .map_err(|e| Error::numeric(format!("epoch {epoch} batch {b}: {e}")))?;
            if g.vision.iter().chain(&g.text).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "epoch {epoch} batch {b}: non-finite gradient (loss {}, sinkhorn residual {:.3e})",
                    g.loss, g.residual
                )));
            }
            opt_v.step(&mut enc.vision.params, &g.vision);
            opt_t.step(&mut enc.text.params, &g.text);
            weighted.push(g.loss * chunk.len() as f64);
        }
        trace.push(pairwise_sum(&weighted) / data.len() as f64);
    }

    Ok(CouplingModel {
        encoders: enc,
        config: cfg.clone(),
        label_marginal: marginal.probs().to_vec(),
        loss_trace: trace,
        dataset_digest: dataset_digest(records),
    })
}

/// Information terms and atoms estimated on held-out records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchEstimate {
    pub decomposition: Decomposition,
    /// `I(X1, X2; Y)` from the multimodal predictions.
    pub total_information: f64,
    pub test_records: usize,
    pub test_batches: usize,
    /// Largest Sinkhorn residual over test batches.
    pub max_sinkhorn_residual: f64,
}

fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > ZERO_MASS)
        .map(|(a, b)| a * (a / b).log2())
        .sum::<f64>()
        .max(0.0)
}

/// Atoms of `test_records` under the learned coupling.
pub fn estimate_atoms(model: &CouplingModel, test_records: &[SampleRecord]) -> Result<BatchEstimate> {
    if test_records.is_empty() {
        return Err(Error::domain("no test records"));
    }
    let cfg = &model.config;
    let k = model.encoders.k;
    let data = prepare(test_records, cfg.tau)?;
    if data.iter().any(|p| p.mm.len() != k) {
        return Err(Error::domain(format!("test records disagree with the model's {k} labels")));
    }
    let py = &model.label_marginal;
    let kl: Vec<[f64; 3]> = data
        .par_iter()
        .map(|p| [kl_bits(&p.mm, py), kl_bits(&p.v, py), kl_bits(&p.t, py)])
        .collect();
    let n = data.len() as f64;
    let mean = |c: usize| pairwise_sum(&kl.iter().map(|r| r[c]).collect::<Vec<_>>()) / n;
    let (total, source1, source2) = (mean(0), mean(1), mean(2));

    let mut weighted = Vec::new();
    let mut worst = 0.0f64;
    let refs: Vec<&Prepared<'_>> = data.iter().collect();
    for chunk in refs.chunks(cfg.test_batch_size) {
        let (rows, cols) = soft_targets(chunk, k);
        let x1: Vec<&[f64]> = chunk.iter().map(|p| p.x1).collect();
        let x2: Vec<&[f64]> = chunk.iter().map(|p| p.x2).collect();
        let (info, residual) = batch_information(&model.encoders, &x1, &x2, &rows, &cols, cfg.sinkhorn_iters, cfg.logit_clamp)?;
        weighted.push(info * chunk.len() as f64);
        worst = worst.max(residual);
    }
    let minimized = pairwise_sum(&weighted) / n;
    let decomposition = atoms_from_information(total, source1, source2, minimized)?;
    Ok(BatchEstimate {
        decomposition,
        total_information: total,
        test_records: data.len(),
        test_batches: weighted.len(),
        max_sinkhorn_residual: worst,
    })
}

/// Pooled marginal over `records`, split, train and estimate.
pub fn fit_and_estimate(records: &[SampleRecord], split: &SplitSpec, cfg: &TrainConfig) -> Result<(CouplingModel, BatchEstimate)> {
    let preds = records
        .iter()
        .map(|r| threshold_regularize(&r.scores_mm, cfg.tau))
        .collect::<Result<Vec<_>>>()?;
    let marginal = aggregate_marginal(&preds)?;
    let (train_set, test_set) = split_dataset(records, split)?;
    let model = train(&train_set, &marginal, cfg)?;
    let estimate = estimate_atoms(&model, &test_set)?;
    Ok((model, estimate))
}
