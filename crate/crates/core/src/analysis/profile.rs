use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stats::median;
use crate::error::{Error, Result};
use crate::solver::PidAtoms;

/// Totals at or below this are treated as carrying no information.
pub const SHARE_TOTAL_FLOOR: f64 = 1e-9;

/// One model's information spectrum on one dataset, optionally at a layer
/// or training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileReport {
    pub model: String,
    pub dataset: String,
    pub layer: Option<u32>,
    pub checkpoint: Option<String>,
    pub family: Option<String>,
    pub size_b: Option<f64>,
    pub regime: Option<String>,
    pub atoms: PidAtoms,
    /// `[R, U1, U2, S]` over their sum; absent when the sum is negligible.
    pub shares: Option<[f64; 4]>,
    pub accuracy: Option<f64>,
    pub accuracy_text_only: Option<f64>,
    pub manifest_digest: String,
}

impl ProfileReport {
    /// Accuracy drop when the image is removed, if both accuracies are known.
    pub fn d_vision(&self) -> Option<f64> {
        Some(d_vision(self.accuracy?, self.accuracy_text_only?))
    }
}

/// Atoms as fractions of their sum.
pub fn pid_shares(atoms: &PidAtoms) -> Result<[f64; 4]> {
    let a = atoms.as_array();
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::domain(format!("atoms {a:?} must be finite and non-negative")));
    }
    let total: f64 = a.iter().sum();
    if total <= SHARE_TOTAL_FLOOR {
        return Err(Error::Degenerate(format!("spectrum total {total:e} is too small for shares")));
    }
    Ok(a.map(|v| v / total))
}

/// `acc_multimodal - acc_text_only`; negative when the image hurts.
pub fn d_vision(acc_multimodal: f64, acc_text_only: f64) -> f64 {
    acc_multimodal - acc_text_only
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyMedian {
    pub family: String,
    pub regime: Option<String>,
    pub models: usize,
    pub synergy_share: f64,
    pub unique2_share: f64,
}

/// Median S and U2 shares per (family, regime) cell, plus one warning per
/// report that could not be placed.
pub fn family_medians(reports: &[ProfileReport]) -> (Vec<FamilyMedian>, Vec<String>) {
    let mut cells: BTreeMap<(String, Option<String>), Vec<[f64; 4]>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in reports {
        match (&r.family, r.shares) {
            (Some(f), Some(s)) => cells.entry((f.clone(), r.regime.clone())).or_default().push(s),
            (None, _) => warnings.push(format!("{} on {}: no family, skipped", r.model, r.dataset)),
            (_, None) => warnings.push(format!("{} on {}: shares undefined, skipped", r.model, r.dataset)),
        }
    }
    let rows = cells
        .into_iter()
        .map(|((family, regime), shares)| {
            let col = |i: usize| median(&shares.iter().map(|s| s[i]).collect::<Vec<_>>()).expect("non-empty cell");
            FamilyMedian {
                family,
                regime,
                models: shares.len(),
                synergy_share: col(3),
                unique2_share: col(2),
            }
        })
        .collect();
    (rows, warnings)
}

/// Percentage-point changes between two model sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub from: String,
    pub to: String,
    pub accuracy: Option<f64>,
    pub synergy: Option<f64>,
    pub unique2: Option<f64>,
}

fn delta(from: &ProfileReport, to: &ProfileReport) -> DeltaRow {
    let pts = |a: Option<f64>, b: Option<f64>| Some(100.0 * (b? - a?));
    DeltaRow {
        from: from.model.clone(),
        to: to.model.clone(),
        accuracy: pts(from.accuracy, to.accuracy),
        synergy: pts(from.shares.map(|s| s[3]), to.shares.map(|s| s[3])),
        unique2: pts(from.shares.map(|s| s[2]), to.shares.map(|s| s[2])),
    }
}

/// Small-to-mid and mid-to-large deltas within one family and dataset.
pub fn scaling_deltas(small: &ProfileReport, mid: &ProfileReport, large: &ProfileReport) -> Result<[DeltaRow; 2]> {
    for r in [mid, large] {
        if r.family != small.family || r.dataset != small.dataset || r.regime != small.regime {
            return Err(Error::domain(format!(
                "{} and {} differ in family, dataset or regime",
                small.model, r.model
            )));
        }
    }
    Ok([delta(small, mid), delta(mid, large)])
}

/// Ordering key of a trace row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TraceKey {
    Layer(u32),
    /// `s<stage>c<index>` checkpoint tag.
    Checkpoint { stage: u32, index: u32 },
}

impl fmt::Display for TraceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceKey::Layer(l) => write!(f, "{l}"),
            TraceKey::Checkpoint { stage, index } => write!(f, "s{stage}c{index}"),
        }
    }
}

impl FromStr for TraceKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::format(format!("checkpoint tag '{s}' is not of the form s<stage>c<index>"));
        let rest = s.strip_prefix('s').ok_or_else(bad)?;
        let (stage, index) = rest.split_once('c').ok_or_else(bad)?;
        Ok(TraceKey::Checkpoint {
            stage: stage.parse().map_err(|_| bad())?,
            index: index.parse().map_err(|_| bad())?,
        })
    }
}

impl TraceKey {
    pub fn of(r: &ProfileReport) -> Result<Self> {
        match (r.layer, &r.checkpoint) {
            (Some(l), None) => Ok(TraceKey::Layer(l)),
            (None, Some(c)) => c.parse(),
            (Some(_), Some(_)) => Err(Error::format(format!("{}: both layer and checkpoint set", r.model))),
            (None, None) => Err(Error::format(format!("{}: neither layer nor checkpoint set", r.model))),
        }
    }

    /// Whether `next` skips positions after `self` in the same sequence.
    fn gap_to(self, next: TraceKey) -> bool {
        match (self, next) {
            (TraceKey::Layer(a), TraceKey::Layer(b)) => b > a + 1,
            (TraceKey::Checkpoint { stage: s, index: a }, TraceKey::Checkpoint { stage: t, index: b }) => {
                if s == t {
                    b > a + 1
                } else {
                    t > s + 1 || b != 1
                }
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub key: TraceKey,
    pub atoms: PidAtoms,
    pub shares: Option<[f64; 4]>,
    /// Positions are missing between the previous row and this one.
    pub gap_before: bool,
    /// First checkpoint of a new training stage.
    pub stage_start: bool,
}

/// Reports ordered by layer or checkpoint.
pub fn trace(reports: &[ProfileReport]) -> Result<Vec<TraceRow>> {
    let mut keyed: Vec<(TraceKey, &ProfileReport)> = reports
        .iter()
        .map(|r| Ok((TraceKey::of(r)?, r)))
        .collect::<Result<_>>()?;
    if keyed.is_empty() {
        return Err(Error::domain("nothing to trace"));
    }
    let layered = matches!(keyed[0].0, TraceKey::Layer(_));
    if keyed.iter().any(|(k, _)| matches!(k, TraceKey::Layer(_)) != layered) {
        return Err(Error::format("trace mixes layer and checkpoint keys"));
    }
    keyed.sort_by_key(|(k, _)| *k);
    if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::format(format!("duplicate trace key {}", w[0].0)));
    }
    Ok(keyed
        .iter()
        .enumerate()
        .map(|(i, (key, r))| {
            let prev = i.checked_sub(1).map(|p| keyed[p].0);
            let stage_start = match (prev, key) {
                (Some(TraceKey::Checkpoint { stage: s, .. }), TraceKey::Checkpoint { stage: t, .. }) => s != *t,
                (None, TraceKey::Checkpoint { .. }) => true,
                _ => false,
            };
            TraceRow {
                key: *key,
                atoms: r.atoms,
                shares: r.shares,
                gap_before: prev.is_some_and(|p| p.gap_to(*key)),
                stage_start,
            }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn atoms(r: f64, u1: f64, u2: f64, s: f64) -> PidAtoms {
        PidAtoms { redundancy: r, unique1: u1, unique2: u2, synergy: s, total: r + u1 + u2 + s }
    }

    pub(crate) fn report(model: &str, a: PidAtoms, acc: Option<f64>) -> ProfileReport {
        ProfileReport {
            model: model.into(),
            dataset: "toy".into(),
            layer: None,
            checkpoint: None,
            family: Some("fam".into()),
            size_b: None,
            regime: None,
            atoms: a,
            shares: pid_shares(&a).ok(),
            accuracy: acc,
            accuracy_text_only: None,
            manifest_digest: "00".into(),
        }
    }

    #[test]
    fn shares_of_known_spectra() {
        assert_eq!(pid_shares(&atoms(0.0, 0.0, 0.0, 1.0)).unwrap(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(pid_shares(&atoms(1.0, 1.0, 1.0, 1.0)).unwrap(), [0.25; 4]);
        let and = pid_shares(&atoms(0.311278, 0.0, 0.0, 0.5)).unwrap();
        assert!((and[0] - 0.3837).abs() < 1e-4 && (and[3] - 0.6163).abs() < 1e-4);
        assert!(matches!(pid_shares(&atoms(0.0, 0.0, 0.0, 1e-10)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn vision_drop() {
        assert!((d_vision(0.8, 0.5) - 0.3).abs() < 1e-15);
        assert_eq!(d_vision(0.7, 0.7), 0.0);
        assert!((d_vision(0.4, 0.6) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn medians_per_family() {
        let mut rs: Vec<ProfileReport> = [0.2, 0.6, 0.4]
            .iter()
            .map(|s| report("m", atoms(0.0, 0.0, 1.0 - s, *s), None))
            .collect();
        let (rows, warn) = family_medians(&rs);
        assert!(warn.is_empty());
        assert!((rows[0].synergy_share - 0.4).abs() < 1e-12);
        assert!((rows[0].unique2_share - 0.6).abs() < 1e-12);
        rs.pop();
        assert!((family_medians(&rs).0[0].synergy_share - 0.4).abs() < 1e-12);
        rs.truncate(1);
        assert!((family_medians(&rs).0[0].synergy_share - 0.2).abs() < 1e-12);
        rs[0].family = None;
        let (rows, warn) = family_medians(&rs);
        assert!(rows.is_empty() && warn.len() == 1);
    }

    #[test]
    fn scaling_rows() {
        let small = report("S", atoms(0.0, 0.0, 0.5, 0.5), Some(0.60));
        let mid = report("M", atoms(0.0, 0.0, 0.55, 0.45), Some(0.719));
        let [a, b] = scaling_deltas(&small, &mid, &mid).unwrap();
        assert!((a.accuracy.unwrap() - 11.9).abs() < 1e-9);
        assert!((a.synergy.unwrap() + 5.0).abs() < 1e-9);
        assert_eq!((b.accuracy, b.synergy, b.unique2), (Some(0.0), Some(0.0), Some(0.0)));
        let blind = report("L", atoms(0.0, 0.0, 0.5, 0.5), None);
        assert_eq!(scaling_deltas(&small, &mid, &blind).unwrap()[1].accuracy, None);
        let other = ProfileReport { dataset: "else".into(), ..mid.clone() };
        assert!(scaling_deltas(&small, &other, &mid).is_err());
    }

    #[test]
    fn layer_trace_is_sorted_with_gaps() {
        let mut rs: Vec<ProfileReport> = [3u32, 0, 1, 5]
            .iter()
            .map(|l| ProfileReport { layer: Some(*l), ..report("m", atoms(0.1, 0.0, 0.0, 0.2), None) })
            .collect();
        let t = trace(&rs).unwrap();
        let keys: Vec<String> = t.iter().map(|r| r.key.to_string()).collect();
        assert_eq!(keys, ["0", "1", "3", "5"]);
        assert_eq!(t.iter().map(|r| r.gap_before).collect::<Vec<_>>(), [false, false, true, true]);
        rs.push(rs[0].clone());
        assert!(matches!(trace(&rs), Err(Error::Format(_))));
        assert_eq!(trace(&rs[..1]).unwrap().len(), 1);
    }

    #[test]
    fn checkpoint_trace_marks_stages() {
        let tags = ["s2c1", "s1c3", "s1c1", "s2c4", "s1c2", "s2c2", "s1c4", "s2c3"];
        let rs: Vec<ProfileReport> = tags
            .iter()
            .map(|c| ProfileReport { checkpoint: Some(c.to_string()), ..report("m", atoms(0.1, 0.0, 0.0, 0.2), None) })
            .collect();
        let t = trace(&rs).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t[0].key.to_string(), "s1c1");
        assert_eq!(t[4].key.to_string(), "s2c1");
        let starts: Vec<usize> = (0..8).filter(|i| t[*i].stage_start).collect();
        assert_eq!(starts, [0, 4]);
        assert!(t.iter().all(|r| !r.gap_before));
        assert!("step9".parse::<TraceKey>().is_err());
    }

    #[test]
    fn layer_zero_trace_of_thirty_two() {
        let rs: Vec<ProfileReport> = (0..32)
            .rev()
            .map(|l| ProfileReport { layer: Some(l), ..report("m", atoms(0.1, 0.0, 0.0, 0.2), None) })
            .collect();
        let t = trace(&rs).unwrap();
        assert!(t.iter().enumerate().all(|(i, r)| r.key == TraceKey::Layer(i as u32)));
    }
}
