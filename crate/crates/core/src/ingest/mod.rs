//! Probe-record wire format and the per-sample transforms applied before estimation.

pub mod scoring;
pub mod sidecar;
pub mod split;
pub mod stats;
pub mod wire;

use std::path::Path;

pub use scoring::{
    aggregate_marginal, length_normalized_score, pool_tokens, threshold_regularize, Pooling,
    RegularizedPrediction, DEFAULT_TAU,
};
pub use split::{split_dataset, SplitSpec};
pub use stats::{compute_modality_stats, Modality, ModalityStats};
pub use wire::{Manifest, SampleRecord};

use crate::error::Result;

/// A records file with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    /// Loads `records` and its manifest (at `manifest`, or next to the records
    /// file), attaching sidecar features when the manifest names them.
    pub fn load(records: &Path, manifest: Option<&Path>) -> Result<Self> {
        let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| wire::manifest_path_for(records));
        let manifest = wire::read_manifest(&mpath)?;
        let mut recs = wire::read_records(records, &manifest)?;
        if let Some(base) = &manifest.feature_sidecar {
            let base = mpath.parent().unwrap_or(Path::new(".")).join(base);
            sidecar::attach_feature_sidecar(&base, &mut recs, manifest.dim_vision, manifest.dim_text)?;
        }
        Ok(Dataset { manifest, records: recs })
    }

    /// Writes records and manifest side by side.
    pub fn save(&self, records: &Path) -> Result<()> {
        wire::write_records(records, &self.records)?;
        wire::write_manifest(&wire::manifest_path_for(records), &self.manifest)
    }

    /// Regularized predictions for one probe condition.
    pub fn regularized(&self, probe: Probe, tau: f64) -> Result<Vec<RegularizedPrediction>> {
        self.records
            .iter()
            .map(|r| threshold_regularize(probe.scores(r), tau))
            .collect()
    }

    /// Fraction of records with `pred == gold`, over records carrying both.
    pub fn accuracy(&self) -> Option<f64> {
        accuracy(self.records.iter().map(|r| (r.pred, r.gold)))
    }

    /// As [`Dataset::accuracy`] with the image removed.
    pub fn accuracy_text_only(&self) -> Option<f64> {
        accuracy(self.records.iter().map(|r| (r.pred_text_only, r.gold)))
    }
}

fn accuracy(pairs: impl Iterator<Item = (Option<usize>, Option<usize>)>) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, g) in pairs {
        if let (Some(p), Some(g)) = (p, g) {
            n += 1;
            hit += usize::from(p == g);
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Which prediction a score vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Multimodal,
    VisionOnly,
    TextOnly,
}

impl Probe {
    pub fn scores(self, r: &SampleRecord) -> &[f64] {
        match self {
            Probe::Multimodal => &r.scores_mm,
            Probe::VisionOnly => &r.scores_v,
            Probe::TextOnly => &r.scores_t,
        }
    }
}
