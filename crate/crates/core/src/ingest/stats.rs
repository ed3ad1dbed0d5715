use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::pairwise_sum;
use crate::ingest::wire::SampleRecord;

/// Standard deviations below this are raised to it and the dimension flagged.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Text,
}

impl Modality {
    pub fn features(self, rec: &SampleRecord) -> &[f64] {
        match self {
            Modality::Vision => &rec.x1,
            Modality::Text => &rec.x2,
        }
    }
}

/// Per-dimension feature statistics used to draw noise for a removed modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityStats {
    pub modality: Modality,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub count: usize,
    /// Dimensions whose sigma was raised to [`SIGMA_FLOOR`].
    #[serde(default)]
    pub floored_dims: Vec<usize>,
}

impl ModalityStats {
    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("stats serialize");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: ModalityStats = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        if s.mu.len() != s.sigma.len() {
            return Err(Error::format("stats mu and sigma lengths differ"));
        }
        if s.sigma.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || s.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("stats hold a negative or non-finite value"));
        }
        Ok(s)
    }
}

/// Unbiased per-dimension mean and standard deviation of one modality.
pub fn compute_modality_stats(records: &[SampleRecord], modality: Modality) -> Result<ModalityStats> {
    if records.len() < 2 {
        return Err(Error::domain(format!("need at least 2 records, got {}", records.len())));
    }
    let d = modality.features(&records[0]).len();
    if d == 0 {
        return Err(Error::format("records carry no features for this modality"));
    }
    if let Some(r) = records.iter().find(|r| modality.features(r).len() != d) {
        return Err(Error::format(format!(
            "record '{}' has {} dims, expected {d}",
            r.id,
            modality.features(r).len()
        )));
    }
    let n = records.len() as f64;
    let mut col = Vec::with_capacity(records.len());
    let mut mu = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    let mut floored_dims = Vec::new();
    for j in 0..d {
        col.clear();
        col.extend(records.iter().map(|r| modality.features(r)[j]));
        let m = pairwise_sum(&col) / n;
        for v in col.iter_mut() {
            *v = (*v - m) * (*v - m);
        }
        let mut s = (pairwise_sum(&col) / (n - 1.0)).sqrt();
        if s < SIGMA_FLOOR {
            s = SIGMA_FLOOR;
            floored_dims.push(j);
        }
        mu.push(m);
        sigma.push(s);
    }
    Ok(ModalityStats {
        modality,
        mu,
        sigma,
        count: records.len(),
        floored_dims,
    })
}
