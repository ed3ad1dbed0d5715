use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::scoring::Pooling;

/// Smallest and largest candidate-set sizes a dataset may declare.
pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 26;

/// One probed multiple-choice sample.
///
/// `x1`/`x2` are pooled vision and text features. They are empty when the
/// manifest points at a binary feature sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub dataset: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub x1: Vec<f64>,
    #[serde(default)]
    pub x2: Vec<f64>,
    pub scores_mm: Vec<f64>,
    pub scores_v: Vec<f64>,
    pub scores_t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
    /// Option picked with image and text present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<usize>,
    /// Option picked with the image removed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_text_only: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenPayload>,
}

/// Unpooled token embeddings, kept for pooling ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenPayload {
    pub vision: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

/// Sidecar describing a records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: String,
    pub model: String,
    /// Options per question. Shorter candidate sets are padded with zero scores.
    pub k: usize,
    pub dim_vision: usize,
    pub dim_text: usize,
    pub pooling: Pooling,
    pub export_tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Parameter count in billions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_b: Option<f64>,
    /// Analysis regime label, e.g. "synergy" or "knowledge".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    /// Base path, relative to the manifest, of a binary feature sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_sidecar: Option<String>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&self.k) {
            return Err(Error::format(format!(
                "manifest k = {} outside [{MIN_OPTIONS}, {MAX_OPTIONS}]",
                self.k
            )));
        }
        if self.dim_vision == 0 || self.dim_text == 0 {
            return Err(Error::format("manifest feature dims must be positive"));
        }
        if let Some(s) = self.size_b {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::format(format!("manifest size_b {s} must be positive")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Field-by-field differences against `other`, as `name: a != b` lines.
    pub fn diff(&self, other: &Manifest) -> Vec<String> {
        let a = serde_json::to_value(self).expect("manifest serializes");
        let b = serde_json::to_value(other).expect("manifest serializes");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .filter(|k| a.get(*k) != b.get(*k))
            .map(|k| {
                let show = |v: Option<&serde_json::Value>| v.map_or("<absent>".to_string(), |v| v.to_string());
                format!("{k}: {} != {}", show(a.get(k)), show(b.get(k)))
            })
            .collect()
    }

    fn uses_sidecar(&self) -> bool {
        self.feature_sidecar.is_some()
    }
}

/// `runs/x.jsonl` -> `runs/x.manifest.json`.
pub fn manifest_path_for(records: &Path) -> PathBuf {
    let stem = records.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    records.with_file_name(format!("{stem}.manifest.json"))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Checks one record against its manifest.
pub fn validate_record(rec: &SampleRecord, manifest: &Manifest) -> Result<()> {
    if rec.id.is_empty() {
        return Err(Error::format("empty id"));
    }
    if rec.dataset != manifest.dataset {
        return Err(Error::format(format!(
            "dataset '{}' does not match manifest '{}'",
            rec.dataset, manifest.dataset
        )));
    }
    if rec.model != manifest.model {
        return Err(Error::format(format!(
            "model '{}' does not match manifest '{}'",
            rec.model, manifest.model
        )));
    }
    for (name, s) in [("scores_mm", &rec.scores_mm), ("scores_v", &rec.scores_v), ("scores_t", &rec.scores_t)] {
        if s.len() != manifest.k {
            return Err(Error::format(format!("{name} has {} entries, manifest k = {}", s.len(), manifest.k)));
        }
        if let Some(v) = s.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::format(format!("{name} holds {v}, outside [0, 1]")));
        }
    }
    let (dv, dt) = if manifest.uses_sidecar() { (0, 0) } else { (manifest.dim_vision, manifest.dim_text) };
    for (name, x, d) in [("x1", &rec.x1, dv), ("x2", &rec.x2, dt)] {
        if x.len() != d {
            return Err(Error::format(format!("{name} has {} dims, expected {d}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("{name} holds a non-finite value")));
        }
    }
    for (name, idx) in [("gold", rec.gold), ("pred", rec.pred), ("pred_text_only", rec.pred_text_only)] {
        if let Some(i) = idx {
            if i >= manifest.k {
                return Err(Error::format(format!("{name} = {i} but k = {}", manifest.k)));
            }
        }
    }
    if let Some(t) = &rec.tokens {
        for (name, toks, d) in [("tokens.vision", &t.vision, manifest.dim_vision), ("tokens.text", &t.text, manifest.dim_text)] {
            if toks.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
                return Err(Error::format(format!("{name} has a token of wrong width or non-finite value")));
            }
        }
    }
    Ok(())
}

fn parse_line(line: &str) -> std::result::Result<SampleRecord, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect()
}

/// Parses and validates a records file. The first bad line aborts with its number.
pub fn read_records(path: &Path, manifest: &Manifest) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: Vec<(usize, std::result::Result<SampleRecord, String>)> = numbered_lines(&text)
        .into_par_iter()
        .map(|(n, line)| {
            let rec = parse_line(line).and_then(|r| validate_record(&r, manifest).map(|_| r).map_err(|e| e.to_string()));
            (n, rec)
        })
        .collect();
    let mut out = Vec::with_capacity(parsed.len());
    let mut seen = HashSet::new();
    for (n, rec) in parsed {
        let rec = rec.map_err(|e| Error::format(format!("{}:{n}: {e}", path.display())))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::format(format!("{}:{n}: duplicate id '{}'", path.display(), rec.id)));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::format(format!("{}: no records", path.display())));
    }
    Ok(out)
}

/// Writes records one per line. Non-finite numbers are refused since the
/// text encoding cannot carry them.
pub fn write_records(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let finite = [&r.x1, &r.x2, &r.scores_mm, &r.scores_v, &r.scores_t]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::format(format!("record '{}' holds a non-finite value", r.id)));
        }
        serde_json::to_writer(&mut w, r).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Outcome of linting a records file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    /// `(line, message)` for each rejected line.
    pub problems: Vec<(usize, String)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty() && self.records > 0
    }
}

/// Lints every line instead of stopping at the first problem.
pub fn validate_file(path: &Path, manifest: &Manifest) -> Result<ValidationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for (n, line) in numbered_lines(&text) {
        match parse_line(line) {
            Err(e) => report.problems.push((n, e)),
            Ok(r) => match validate_record(&r, manifest) {
                Err(e) => report.problems.push((n, e.to_string())),
                Ok(()) if !seen.insert(r.id.clone()) => {
                    report.problems.push((n, format!("duplicate id '{}'", r.id)))
                }
                Ok(()) => report.records += 1,
            },
        }
    }
    if report.records == 0 && report.problems.is_empty() {
        report.problems.push((0, "no records".into()));
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn manifest() -> Manifest {
        Manifest {
            dataset: "toy".into(),
            model: "m".into(),
            k: 3,
            dim_vision: 2,
            dim_text: 1,
            pooling: Pooling::Mean,
            export_tool_version: "0.1.0".into(),
            family: None,
            size_b: None,
            regime: None,
            feature_sidecar: None,
        }
    }

    pub(crate) fn record(id: &str) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            dataset: "toy".into(),
            model: "m".into(),
            layer: None,
            checkpoint: None,
            x1: vec![0.1, -0.2],
            x2: vec![3.5],
            scores_mm: vec![0.7, 0.2, 0.05],
            scores_v: vec![0.3, 0.3, 0.3],
            scores_t: vec![0.1, 0.1, 0.0],
            gold: Some(0),
            pred: Some(0),
            pred_text_only: Some(1),
            tokens: None,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut a = record("a");
        a.x1 = vec![0.1 + 0.2, 1e-300];
        a.layer = Some(7);
        let b = record("b");
        write_records(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_records(&path, &manifest()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn bad_line_is_reported_with_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let good = serde_json::to_string(&record("a")).unwrap();
        fs::write(&path, format!("{good}\n\n{{not json\n")).unwrap();
        let err = read_records(&path, &manifest()).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");

        let report = validate_file(&path, &manifest()).unwrap();
        assert_eq!(report.records, 1);
        assert_eq!(report.problems.len(), 1);
        assert_eq!(report.problems[0].0, 3);
    }

    #[test]
    fn record_checks() {
        let m = manifest();
        let mut r = record("a");
        r.scores_v.push(0.1);
        assert!(validate_record(&r, &m).is_err());
        let mut r = record("a");
        r.scores_mm[0] = 1.5;
        assert!(validate_record(&r, &m).is_err());
        let mut r = record("a");
        r.x1.pop();
        assert!(validate_record(&r, &m).is_err());
        let mut r = record("a");
        r.gold = Some(3);
        assert!(validate_record(&r, &m).is_err());
        let mut r = record("a");
        r.model = "other".into();
        assert!(validate_record(&r, &m).is_err());
        assert!(validate_record(&record("a"), &m).is_ok());
    }

    #[test]
    fn duplicate_ids_and_unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(&path, &[record("a"), record("a")]).unwrap();
        assert!(read_records(&path, &manifest()).is_err());

        let mut v = serde_json::to_value(record("a")).unwrap();
        v["surprise"] = 1.into();
        assert!(parse_line(&v.to_string()).is_err());
    }

    #[test]
    fn non_finite_values_are_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("a");
        r.x2[0] = f64::NAN;
        assert!(write_records(&dir.path().join("r.jsonl"), &[r]).is_err());
    }

    #[test]
    fn manifest_round_trip_digest_and_diff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = manifest();
        m.family = Some("fam".into());
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
        assert_eq!(m.digest().len(), 64);

        let mut other = m.clone();
        other.k = 4;
        assert_ne!(other.digest(), m.digest());
        assert_eq!(m.diff(&other), vec!["k: 3 != 4".to_string()]);

        let mut bad = m.clone();
        bad.k = 27;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn manifest_path_convention() {
        assert_eq!(
            manifest_path_for(Path::new("runs/pope.jsonl")),
            PathBuf::from("runs/pope.manifest.json")
        );
    }
}
