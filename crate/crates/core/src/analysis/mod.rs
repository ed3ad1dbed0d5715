//! Shares, correlations, scaling and trace tables over profile reports.

pub mod profile;
pub mod report;
pub mod stats;

use std::collections::BTreeMap;

use serde::Serialize;

pub use profile::{
    d_vision, family_medians, pid_shares, scaling_deltas, trace, DeltaRow, FamilyMedian, ProfileReport, TraceKey,
    TraceRow,
};
pub use stats::{
    median, percentile_bootstrap, spearman, spearman_exact, BootstrapConfig, CorrelationResult, Interval,
};

use crate::error::{Error, Result};

pub const TERMS: [&str; 8] = ["R", "U1", "U2", "S", "share_R", "share_U1", "share_U2", "share_S"];

/// Spearman correlation of accuracy with every atom and share, over the
/// reports that carry the needed values. Terms that are constant across
/// reports have no correlation and come back as `None`.
pub fn correlate_accuracy(reports: &[ProfileReport], exact: bool) -> Result<Vec<(String, Option<CorrelationResult>)>> {
    TERMS
        .iter()
        .enumerate()
        .map(|(i, term)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = reports
                .iter()
                .filter_map(|r| {
                    let v = if i < 4 { Some(r.atoms.as_array()[i]) } else { r.shares.map(|s| s[i - 4]) };
                    Some((r.accuracy?, v?))
                })
                .unzip();
            let c = if exact { spearman_exact(&xs, &ys) } else { spearman(&xs, &ys) };
            match c {
                Ok(c) => Ok((term.to_string(), Some(c))),
                Err(Error::Degenerate(_)) => Ok((term.to_string(), None)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Size-ordered deltas per (family, dataset, regime) with three or more
/// sized models; the smallest, median-sized and largest are compared.
pub fn scaling_table(reports: &[ProfileReport]) -> Result<Vec<(String, DeltaRow)>> {
    let mut cells: BTreeMap<(String, String, Option<String>), Vec<&ProfileReport>> = BTreeMap::new();
    for r in reports {
        if let (Some(f), Some(_)) = (&r.family, r.size_b) {
            cells.entry((f.clone(), r.dataset.clone(), r.regime.clone())).or_default().push(r);
        }
    }
    let mut out = Vec::new();
    for ((family, _, _), mut rs) in cells {
        if rs.len() < 3 {
            continue;
        }
        rs.sort_by(|a, b| a.size_b.unwrap().total_cmp(&b.size_b.unwrap()).then_with(|| a.model.cmp(&b.model)));
        let [a, b] = scaling_deltas(rs[0], rs[rs.len() / 2], rs[rs.len() - 1])?;
        out.push((family.clone(), a));
        out.push((family, b));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeShares {
    pub regime: String,
    pub models: usize,
    pub synergy_share: Interval,
    pub unique2_share: Interval,
}

/// Mean S and U2 shares per regime label, with percentile bootstrap
/// intervals when `bootstrap` is given (otherwise the interval collapses
/// to the estimate).
pub fn regime_shares(reports: &[ProfileReport], bootstrap: Option<&BootstrapConfig>) -> Result<Vec<RegimeShares>> {
    let mut cells: BTreeMap<String, Vec<[f64; 4]>> = BTreeMap::new();
    for r in reports {
        if let (Some(g), Some(s)) = (&r.regime, r.shares) {
            cells.entry(g.clone()).or_default().push(s);
        }
    }
    cells
        .into_iter()
        .map(|(regime, shares)| {
            let interval = |i: usize| -> Result<Interval> {
                let v: Vec<f64> = shares.iter().map(|s| s[i]).collect();
                match bootstrap {
                    Some(cfg) => percentile_bootstrap(&v, stats::mean, cfg),
                    None => {
                        let m = stats::mean(&v);
                        Ok(Interval { estimate: m, lower: m, upper: m })
                    }
                }
            };
            Ok(RegimeShares {
                models: shares.len(),
                synergy_share: interval(3)?,
                unique2_share: interval(2)?,
                regime,
            })
        })
        .collect()
}
