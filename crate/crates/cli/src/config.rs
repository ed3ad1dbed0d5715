use std::path::{Path, PathBuf};

use pidlens::analysis::BootstrapConfig;
use pidlens::batch::TrainConfig;
use pidlens::ingest::{SplitSpec, DEFAULT_TAU};
use pidlens::{Error, Result, SolveOptions};
use serde::{Deserialize, Serialize};

/// Settings shared by every command, loaded from TOML and then overridden
/// by command-line flags. The resolved value is written next to each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 leaves the choice to the runtime. Left out of the
    /// echoed config since outputs never depend on it.
    #[serde(skip_serializing)]
    pub threads: usize,
    pub tau: f64,
    /// Largest certified gap, in bits, accepted from a solve that hit its
    /// iteration cap.
    pub gap_tolerance: f64,
    pub out_dir: Option<PathBuf>,
    pub solver: SolveOptions,
    pub batch: TrainConfig,
    pub split: SplitSpec,
    pub bootstrap: BootstrapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            tau: DEFAULT_TAU,
            gap_tolerance: 1e-3,
            out_dir: None,
            solver: SolveOptions::default(),
            batch: TrainConfig::default(),
            split: SplitSpec::default(),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub tau: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Applies overrides, then copies the run-wide seed and tau into every
    /// component that uses them.
    pub fn resolve(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(t) = o.tau {
            self.tau = t;
        }
        if o.out_dir.is_some() {
            self.out_dir.clone_from(&o.out_dir);
        }
        self.batch.seed = self.seed;
        self.batch.tau = self.tau;
        self.split.seed = self.seed;
        self.bootstrap.seed = self.seed;
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[batch]\nepochs = 2\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.batch.epochs, 2);
        assert_eq!(c.batch.batch_size, 256);
        assert_eq!(c.split, SplitSpec::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sead = 4\n").is_err());
        assert!(toml::from_str::<RunConfig>("[batch]\nepoch = 4\n").is_err());
    }

    #[test]
    fn flags_win_and_seed_propagates() {
        let base: RunConfig = toml::from_str("seed = 4\ntau = 0.2\n").unwrap();
        let r = base.resolve(&Overrides { seed: Some(9), ..Default::default() });
        assert_eq!((r.seed, r.batch.seed, r.split.seed, r.bootstrap.seed), (9, 9, 9, 9));
        assert_eq!((r.tau, r.batch.tau), (0.2, 0.2));
        assert_eq!(r.out_dir(), PathBuf::from("."));
    }
}
