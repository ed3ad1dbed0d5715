use serde::Serialize;
use sha2::{Digest, Sha256};

use super::profile::{DeltaRow, FamilyMedian, ProfileReport, TraceRow};
use super::stats::CorrelationResult;
use crate::error::Result;

/// Header plus rows of already-formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Comma-separated text with LF line endings.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// Shortest round-tripping decimal; empty for missing values.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn text(v: &Option<impl ToString>) -> String {
    v.as_ref().map_or_else(String::new, ToString::to_string)
}

/// Combined digest of several manifests, order-sensitive.
pub fn combined_digest<'a>(digests: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for d in digests {
        h.update(d.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn atoms_table(reports: &[ProfileReport]) -> Table {
    let mut t = Table::new(&[
        "model", "dataset", "layer", "checkpoint", "family", "size_b", "regime", "R", "U1", "U2", "S", "total",
        "share_R", "share_U1", "share_U2", "share_S", "accuracy", "accuracy_text_only", "d_vision", "manifest_digest",
    ]);
    for r in reports {
        let a = r.atoms;
        let share = |i: usize| cell(r.shares.map(|s| s[i]));
        t.rows.push(vec![
            r.model.clone(),
            r.dataset.clone(),
            text(&r.layer),
            text(&r.checkpoint),
            text(&r.family),
            cell(r.size_b),
            text(&r.regime),
            cell(Some(a.redundancy)),
            cell(Some(a.unique1)),
            cell(Some(a.unique2)),
            cell(Some(a.synergy)),
            cell(Some(a.total)),
            share(0),
            share(1),
            share(2),
            share(3),
            cell(r.accuracy),
            cell(r.accuracy_text_only),
            cell(r.d_vision()),
            r.manifest_digest.clone(),
        ]);
    }
    t
}

/// Undefined correlations leave their cells blank.
pub fn correlation_table(rows: &[(String, Option<CorrelationResult>)], digest: &str) -> Table {
    let mut t = Table::new(&["term", "rho", "p_value", "n", "manifest_digest"]);
    for (term, c) in rows {
        t.rows.push(vec![
            term.clone(),
            cell(c.map(|c| c.rho)),
            cell(c.map(|c| c.p_value)),
            c.map_or_else(String::new, |c| c.n.to_string()),
            digest.into(),
        ]);
    }
    t
}

pub fn family_table(rows: &[FamilyMedian], digest: &str) -> Table {
    let mut t = Table::new(&["family", "regime", "models", "median_share_S", "median_share_U2", "manifest_digest"]);
    for r in rows {
        t.rows.push(vec![
            r.family.clone(),
            text(&r.regime),
            r.models.to_string(),
            cell(Some(r.synergy_share)),
            cell(Some(r.unique2_share)),
            digest.into(),
        ]);
    }
    t
}

pub fn delta_table(rows: &[(String, DeltaRow)], digest: &str) -> Table {
    let mut t = Table::new(&["family", "from", "to", "delta_acc_pts", "delta_S_pts", "delta_U2_pts", "manifest_digest"]);
    for (family, r) in rows {
        t.rows.push(vec![
            family.clone(),
            r.from.clone(),
            r.to.clone(),
            cell(r.accuracy),
            cell(r.synergy),
            cell(r.unique2),
            digest.into(),
        ]);
    }
    t
}

pub fn trace_table(rows: &[TraceRow], digest: &str) -> Table {
    let mut t = Table::new(&[
        "key", "R", "U1", "U2", "S", "share_R", "share_U1", "share_U2", "share_S", "gap_before", "stage_start",
        "manifest_digest",
    ]);
    for r in rows {
        let a = r.atoms;
        let share = |i: usize| cell(r.shares.map(|s| s[i]));
        t.rows.push(vec![
            r.key.to_string(),
            cell(Some(a.redundancy)),
            cell(Some(a.unique1)),
            cell(Some(a.unique2)),
            cell(Some(a.synergy)),
            share(0),
            share(1),
            share(2),
            share(3),
            r.gap_before.to_string(),
            r.stage_start.to_string(),
            digest.into(),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Plot-ready series with the run's provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartBundle<P: Serialize> {
    pub provenance: P,
    pub series: Vec<Series>,
}

impl<P: Serialize> ChartBundle<P> {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| crate::error::Error::format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// One series per atom share along a trace.
pub fn trace_series(rows: &[TraceRow]) -> Vec<Series> {
    let x: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
    ["share_R", "share_U1", "share_U2", "share_S"]
        .iter()
        .enumerate()
        .map(|(i, name)| Series {
            name: name.to_string(),
            x: x.clone(),
            y: rows.iter().map(|r| r.shares.map_or(f64::NAN, |s| s[i])).collect(),
        })
        .collect()
}
