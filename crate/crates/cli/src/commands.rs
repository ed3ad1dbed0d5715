use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pidlens::analysis::report::{self, combined_digest, ChartBundle, Series, Table};
use pidlens::analysis::{self, pid_shares, ProfileReport};
use pidlens::batch::fit_and_estimate;
use pidlens::ingest::wire::{self, manifest_path_for};
use pidlens::ingest::{compute_modality_stats, Dataset, Modality, SampleRecord};
use pidlens::solver::{decompose as solve_decompose, Decomposition};
use pidlens::synth::{
    continuous_manifest, discretized_joint, gate_joint, gen_continuous, sample_gate, ContinuousSpec, Gate, GateSpec,
    Structure,
};
use pidlens::{Error, JointPmf, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Hex SHA-256 of the compact JSON encoding.
fn digest_json(v: &impl Serialize) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("serializable")))
}

pub enum Source {
    Gate(Gate, f64),
    Joint(PathBuf),
    Records(PathBuf, Option<PathBuf>),
}

#[derive(Serialize)]
struct Input {
    path: String,
    manifest_digest: String,
}

/// Collects output files and writes the provenance record last.
struct Outputs<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    dir: PathBuf,
    inputs: Vec<Input>,
    written: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig, command: &'static str) -> Self {
        Outputs {
            cfg,
            command,
            dir: cfg.out_dir(),
            inputs: Vec::new(),
            written: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path, manifest_digest: String) {
        self.inputs.push(Input {
            path: path.display().to_string(),
            manifest_digest,
        });
    }

    fn provenance(&self) -> Value {
        json!({
            "tool": "pidlens",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.cfg,
            "inputs": self.inputs,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write(name, table.to_csv().as_bytes())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn chart(&mut self, name: &str, series: Vec<Series>) -> Result<()> {
        let bundle = ChartBundle {
            provenance: self.provenance(),
            series,
        };
        self.write(name, bundle.to_json()?.as_bytes())
    }

    fn finish(mut self) -> Result<()> {
        let mut p = self.provenance();
        p["outputs"] = json!(self.written);
        self.json("provenance.json", &p)
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_joint(path: &Path) -> Result<JointPmf> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn decomposition_table(d: &Decomposition, estimator: &str, digest: &str) -> Table {
    let mut t = Table::new(&[
        "estimator", "R", "U1", "U2", "S", "total", "share_R", "share_U1", "share_U2", "share_S", "residual_sum",
        "residual_source1", "residual_source2", "residual_co_information", "redundancy_shortcut", "manifest_digest",
    ]);
    let a = d.atoms;
    let shares = pid_shares(&a).ok();
    let share = |i: usize| report::cell(shares.map(|s| s[i]));
    let r = d.residuals;
    let c = |v: f64| report::cell(Some(v));
    t.rows.push(vec![
        estimator.into(),
        c(a.redundancy),
        c(a.unique1),
        c(a.unique2),
        c(a.synergy),
        c(a.total),
        share(0),
        share(1),
        share(2),
        share(3),
        c(r.sum),
        c(r.source1),
        c(r.source2),
        c(r.co_information),
        c(r.redundancy_shortcut),
        digest.into(),
    ]);
    t
}

/// Discrete decomposition that fails when the solver stops early.
fn discrete(cfg: &RunConfig, joint: &JointPmf) -> Result<(Decomposition, Value)> {
    let (d, out) = solve_decompose(joint, &cfg.solver)?;
    if !out.converged && !(out.gap <= cfg.gap_tolerance) {
        return Err(Error::Convergence(format!(
            "solver stopped after {} iterations with certified gap {:.3e} bits",
            out.iterations, out.gap
        )));
    }
    let diag = json!({
        "iterations": out.iterations,
        "converged": out.converged,
        "certified_gap_bits": out.gap,
        "accepted_by_gap": !out.converged,
        "objective_bits": out.trace.last(),
    });
    Ok((d, diag))
}

pub fn decompose(cfg: &RunConfig, source: Source, batch: Option<bool>) -> Result<()> {
    let mut o = Outputs::new(cfg, "decompose");
    let (estimator, d, diag, digest) = match source {
        Source::Gate(gate, noise) => {
            if batch == Some(true) {
                return Err(Error::Capability("the batch estimator needs records with continuous features".into()));
            }
            let joint = gate_joint(&GateSpec::exact(gate, noise))?;
            let digest = digest_json(&joint);
            o.input(Path::new(&format!("gate:{gate}:{noise}")), digest.clone());
            let (d, diag) = discrete(cfg, &joint)?;
            ("discrete", d, diag, digest)
        }
        Source::Joint(path) => {
            if batch == Some(true) {
                return Err(Error::Capability("the batch estimator needs records with continuous features".into()));
            }
            let joint = load_joint(&path)?;
            let digest = digest_json(&joint);
            o.input(&path, digest.clone());
            let (d, diag) = discrete(cfg, &joint)?;
            ("discrete", d, diag, digest)
        }
        Source::Records(path, manifest) => {
            let ds = Dataset::load(&path, manifest.as_deref())?;
            let digest = ds.manifest.digest();
            o.input(&path, digest.clone());
            if batch == Some(false) {
                let joint = discretized_joint(&ds.records, cfg.tau)?;
                let (d, diag) = discrete(cfg, &joint)?;
                ("discrete", d, diag, digest)
            } else {
                let (model, est) = fit_and_estimate(&ds.records, &cfg.split, &cfg.batch)?;
                o.write("model.bin", &model.to_bytes())?;
                let x: Vec<f64> = (1..=model.loss_trace.len()).map(|e| e as f64).collect();
                o.chart(
                    "loss.json",
                    vec![Series {
                        name: "epoch_mean_loss_bits".into(),
                        x,
                        y: model.loss_trace.clone(),
                    }],
                )?;
                let diag = json!({
                    "model_digest": model.digest(),
                    "dataset_digest": model.dataset_digest,
                    "total_information_bits": est.total_information,
                    "test_records": est.test_records,
                    "test_batches": est.test_batches,
                    "max_sinkhorn_residual": est.max_sinkhorn_residual,
                    "loss_trace": model.loss_trace,
                });
                ("batch", est.decomposition, diag, digest)
            }
        }
    };
    o.csv("atoms.csv", &decomposition_table(&d, estimator, &digest))?;
    let body = json!({
        "provenance": o.provenance(),
        "estimator": estimator,
        "decomposition": d,
        "shares": pid_shares(&d.atoms).ok(),
        "diagnostics": diag,
    });
    o.json("decomposition.json", &body)?;
    o.finish()
}

/// Fields that must agree across the files of one analysis.
const SHARED_FIELDS: [&str; 3] = ["dataset", "k", "pooling"];

fn accuracy(records: &[&SampleRecord], text_only: bool) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for r in records {
        let pred = if text_only { r.pred_text_only } else { r.pred };
        if let (Some(p), Some(g)) = (pred, r.gold) {
            n += 1;
            hit += usize::from(p == g);
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

type GroupKey = (Option<u32>, Option<String>);

pub fn profile(cfg: &RunConfig, inputs: &[PathBuf], batch: bool) -> Result<()> {
    let mut o = Outputs::new(cfg, "profile");
    let mut sets = Vec::with_capacity(inputs.len());
    for path in inputs {
        let ds = Dataset::load(path, None)?;
        if let Some((first_path, first)) = sets.first().map(|(p, d): &(&PathBuf, Dataset)| (p, &d.manifest)) {
            let diff: Vec<String> = first
                .diff(&ds.manifest)
                .into_iter()
                .filter(|line| SHARED_FIELDS.iter().any(|f| line.starts_with(&format!("{f}:"))))
                .collect();
            if !diff.is_empty() {
                return Err(Error::Format(format!(
                    "manifests of {} and {} disagree: {}",
                    first_path.display(),
                    path.display(),
                    diff.join("; ")
                )));
            }
        }
        o.input(path, ds.manifest.digest());
        sets.push((path, ds));
    }

    let mut jobs = Vec::new();
    for (_, ds) in &sets {
        let mut groups: BTreeMap<GroupKey, Vec<&SampleRecord>> = BTreeMap::new();
        for r in &ds.records {
            groups.entry((r.layer, r.checkpoint.clone())).or_default().push(r);
        }
        for (key, recs) in groups {
            jobs.push((ds, key, recs));
        }
    }
    let reports: Vec<ProfileReport> = jobs
        .par_iter()
        .map(|(ds, (layer, checkpoint), recs)| {
            let owned: Vec<SampleRecord> = recs.iter().map(|r| (*r).clone()).collect();
            let d = if batch {
                fit_and_estimate(&owned, &cfg.split, &cfg.batch)?.1.decomposition
            } else {
                discrete(cfg, &discretized_joint(&owned, cfg.tau)?)?.0
            };
            let m = &ds.manifest;
            Ok(ProfileReport {
                model: m.model.clone(),
                dataset: m.dataset.clone(),
                layer: *layer,
                checkpoint: checkpoint.clone(),
                family: m.family.clone(),
                size_b: m.size_b,
                regime: m.regime.clone(),
                atoms: d.atoms,
                shares: pid_shares(&d.atoms).ok(),
                accuracy: accuracy(recs, false),
                accuracy_text_only: accuracy(recs, true),
                manifest_digest: m.digest(),
            })
        })
        .collect::<Result<_>>()?;
    for r in &reports {
        if r.shares.is_none() {
            eprintln!("pidlens: warning: {} on {}: spectrum too small for shares", r.model, r.dataset);
        }
        if r.d_vision().is_some_and(|d| d < 0.0) {
            eprintln!("pidlens: warning: {} on {}: removing the image raises accuracy", r.model, r.dataset);
        }
    }
    o.json("profiles.json", &reports)?;
    o.csv("atoms.csv", &report::atoms_table(&reports))?;
    o.finish()
}

fn load_profiles(o: &mut Outputs<'_>, inputs: &[PathBuf]) -> Result<Vec<ProfileReport>> {
    let mut all = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        let reports: Vec<ProfileReport> =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        o.input(path, combined_digest(reports.iter().map(|r| r.manifest_digest.as_str())));
        all.extend(reports);
    }
    Ok(all)
}

pub fn correlate(cfg: &RunConfig, inputs: &[PathBuf], exact: bool, bootstrap: bool) -> Result<()> {
    let mut o = Outputs::new(cfg, "correlate");
    let reports = load_profiles(&mut o, inputs)?;
    let digest = combined_digest(reports.iter().map(|r| r.manifest_digest.as_str()));
    let corr = analysis::correlate_accuracy(&reports, exact)?;
    let (families, warnings) = analysis::family_medians(&reports);
    for w in &warnings {
        eprintln!("pidlens: warning: {w}");
    }
    let deltas = analysis::scaling_table(&reports)?;
    let regimes = analysis::regime_shares(&reports, bootstrap.then_some(&cfg.bootstrap))?;

    o.csv("correlations.csv", &report::correlation_table(&corr, &digest))?;
    o.csv("families.csv", &report::family_table(&families, &digest))?;
    o.csv("scaling.csv", &report::delta_table(&deltas, &digest))?;
    let mut rt = Table::new(&[
        "regime", "models", "share_S", "share_S_lower", "share_S_upper", "share_U2", "share_U2_lower",
        "share_U2_upper", "manifest_digest",
    ]);
    for g in &regimes {
        let c = |v: f64| report::cell(Some(v));
        let (s, u) = (g.synergy_share, g.unique2_share);
        rt.rows.push(vec![
            g.regime.clone(),
            g.models.to_string(),
            c(s.estimate),
            c(s.lower),
            c(s.upper),
            c(u.estimate),
            c(u.lower),
            c(u.upper),
            digest.clone(),
        ]);
    }
    o.csv("regimes.csv", &rt)?;

    let with_acc: Vec<&ProfileReport> = reports.iter().filter(|r| r.accuracy.is_some()).collect();
    let series = analysis::TERMS
        .iter()
        .enumerate()
        .map(|(i, term)| {
            let (x, y) = with_acc
                .iter()
                .filter_map(|r| {
                    let v = if i < 4 { Some(r.atoms.as_array()[i]) } else { r.shares.map(|s| s[i - 4]) };
                    Some((r.accuracy?, v?))
                })
                .unzip();
            Series {
                name: format!("accuracy_vs_{term}"),
                x,
                y,
            }
        })
        .collect();
    o.chart("correlations.json", series)?;
    o.finish()
}

pub fn trace(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let mut o = Outputs::new(cfg, "trace");
    let reports = load_profiles(&mut o, inputs)?;
    let digest = combined_digest(reports.iter().map(|r| r.manifest_digest.as_str()));
    let rows = analysis::trace(&reports)?;
    o.csv("trace.csv", &report::trace_table(&rows, &digest))?;
    o.chart("trace.json", report::trace_series(&rows))?;
    o.finish()
}

pub fn synth_gate(cfg: &RunConfig, gate: Gate, noise: f64, samples: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let mut o = Outputs::new(cfg, "synth-gate");
    let spec = GateSpec {
        gate,
        flip_noise: noise,
        n_samples: samples.unwrap_or(0),
        seed: cfg.seed,
    };
    let joint = if samples.is_some() { sample_gate(&spec)? } else { gate_joint(&spec)? };
    let mut text = serde_json::to_string_pretty(&joint).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    let path = out.unwrap_or_else(|| o.dir.join(format!("{gate}.joint.json")));
    write_file(&path, text.as_bytes())?;
    o.input(&path, digest_json(&joint));
    o.finish()
}

pub fn synth_continuous(
    cfg: &RunConfig,
    structure: Structure,
    n: usize,
    dim: usize,
    separation: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut o = Outputs::new(cfg, "synth-continuous");
    let spec = ContinuousSpec {
        structure,
        dim,
        cluster_separation: separation,
        n_samples: n,
        seed: cfg.seed,
    };
    let records = gen_continuous(&spec)?;
    let manifest = continuous_manifest(&spec);
    let path = out.unwrap_or_else(|| o.dir.join(format!("{}.jsonl", spec.dataset_name())));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    Dataset { manifest: manifest.clone(), records }.save(&path)?;
    o.input(&path, manifest.digest());
    o.finish()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io(path, e))
}

pub fn stats(cfg: &RunConfig, input: &Path, manifest: Option<&Path>, modality: Modality, out: Option<PathBuf>) -> Result<()> {
    let mut o = Outputs::new(cfg, "stats");
    let ds = Dataset::load(input, manifest)?;
    o.input(input, ds.manifest.digest());
    let s = compute_modality_stats(&ds.records, modality)?;
    if !s.floored_dims.is_empty() {
        eprintln!("pidlens: warning: {} constant dimensions floored", s.floored_dims.len());
    }
    let name = format!("{}.{}.stats.json", ds.manifest.dataset, modality_name(modality));
    let path = out.unwrap_or_else(|| o.dir.join(name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    s.save(&path)?;
    o.finish()
}

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Vision => "vision",
        Modality::Text => "text",
    }
}

pub fn validate(input: &Path, manifest: Option<&Path>) -> Result<()> {
    let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| manifest_path_for(input));
    let m = wire::read_manifest(&mpath)?;
    let report = wire::validate_file(input, &m)?;
    for (line, msg) in &report.problems {
        println!("{}:{line}: {msg}", input.display());
    }
    if report.is_clean() {
        println!("{}: {} records ok", input.display(), report.records);
        Ok(())
    } else {
        Err(Error::Format(format!("{} problem(s) in {}", report.problems.len(), input.display())))
    }
}
