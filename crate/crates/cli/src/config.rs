//! Experiment configuration (TOML) with command-line overrides.
//!
//! ```toml
//! out_dir = "out"
//! k_max = 49
//! tie_seed = 7
//!
//! [baseline]
//! trials = 10000
//! seed = 1
//!
//! [ground_truth]
//! piles = ["piles_p1.json", "piles_p2.json"]
//! perf_table = "perf_terms.csv"
//!
//! [models]
//! alpha = "models/alpha.jsonl"
//! ```
//!
//! Relative paths resolve against `data_dir`, which defaults to
//! `$AUDIT_DATA_DIR` and then to the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "AUDIT_DATA_DIR";

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_k_max() -> usize {
    49
}
fn default_tie_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_tie_seed")]
    pub tie_seed: u64,
    #[serde(default)]
    pub baseline: BaselineSection,
    pub ground_truth: GroundTruthSection,
    /// Model name to term-embedding file.
    #[serde(default)]
    pub models: BTreeMap<String, PathBuf>,
    /// Model name to context-prompted term-embedding file; names must also
    /// appear under `models`.
    #[serde(default)]
    pub context: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub hubness: HubnessSection,
    #[serde(default)]
    pub kmeans: KMeansSection,
    #[serde(default)]
    pub cross_modal: Option<CrossModalSection>,
    #[serde(default)]
    pub mds: MdsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub trials: usize,
    pub seed: u64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            trials: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSection {
    pub piles: Vec<PathBuf>,
    #[serde(default)]
    pub perf_table: Option<PathBuf>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Term list fixing the vocabulary order; defaults to the sorted union
    /// of all pile and table terms.
    #[serde(default)]
    pub terms: Option<PathBuf>,
    /// Inclusive k range in which pile-vs-pile agreement is reported.
    #[serde(default = "default_window")]
    pub agreement_window: [usize; 2],
}

fn default_window() -> [usize; 2] {
    [5, 10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HubnessSection {
    pub ks: Vec<usize>,
    pub method: String,
    /// Seed of the Gaussian random-baseline space.
    pub random_seed: u64,
    pub random_dim: usize,
}

impl Default for HubnessSection {
    fn default() -> Self {
        HubnessSection {
            ks: vec![4, 8, 16],
            method: "mp-gauss".into(),
            random_seed: 3,
            random_dim: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansSection {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub random_seed: u64,
    pub random_dim: usize,
}

impl Default for KMeansSection {
    fn default() -> Self {
        KMeansSection {
            k: 22,
            seed: 7,
            restarts: 10,
            random_seed: 5,
            random_dim: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossModalSection {
    /// Audio embeddings keyed by performance id.
    pub audio: PathBuf,
    /// Term-embedding files whose per-performance means are compared with
    /// the audio space.
    pub text: Vec<PathBuf>,
    #[serde(default)]
    pub weighting: Weighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Unique,
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdsSection {
    pub dims: usize,
    /// `smacof` (classical start, then stress majorization) or `classical`.
    pub method: String,
    pub seed: u64,
    /// Layout dimensions whose neighborhoods are compared with the original
    /// ground truth.
    pub fidelity_dims: Vec<usize>,
    pub fidelity_ks: [usize; 2],
}

impl Default for MdsSection {
    fn default() -> Self {
        MdsSection {
            dims: 2,
            method: "smacof".into(),
            seed: 11,
            fidelity_dims: vec![2, 8],
            fidelity_ks: [5, 10],
        }
    }
}

/// Values given on the command line; each one replaces the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub k_max: Option<usize>,
    pub tie_seed: Option<u64>,
    pub trials: Option<usize>,
    pub baseline_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, applies `overrides`, and fills in `data_dir`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply(overrides);
        if cfg.data_dir.is_none() {
            cfg.data_dir = Some(match std::env::var_os(DATA_DIR_ENV) {
                Some(d) => PathBuf::from(d),
                None => path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            });
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.data_dir {
            self.data_dir = Some(d.clone());
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(k) = o.k_max {
            self.k_max = k;
        }
        if let Some(s) = o.tie_seed {
            self.tie_seed = s;
        }
        if let Some(t) = o.trials {
            self.baseline.trials = t;
        }
        if let Some(s) = o.baseline_seed {
            self.baseline.seed = s;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Every input file the config refers to, in a fixed order.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let gt = &self.ground_truth;
        let mut out: Vec<PathBuf> = gt.piles.clone();
        out.extend(gt.perf_table.clone());
        out.extend(gt.terms.clone());
        out.extend(self.models.values().cloned());
        out.extend(self.context.values().cloned());
        if let Some(cm) = &self.cross_modal {
            out.push(cm.audio.clone());
            out.extend(cm.text.iter().cloned());
        }
        out
    }

    /// Fails with the first missing input or inconsistent setting.
    pub fn validate(&self) -> Result<(), CliError> {
        for p in self.inputs() {
            let full = self.resolve(&p);
            if !full.is_file() {
                return Err(CliError::Config(format!("missing input {}", full.display())));
            }
        }
        if self.ground_truth.piles.is_empty() {
            return Err(CliError::Config("ground_truth.piles is empty".into()));
        }
        if let Some(name) = self.context.keys().find(|k| !self.models.contains_key(*k)) {
            return Err(CliError::Config(format!("context model `{name}` has no plain counterpart")));
        }
        let [lo, hi] = self.ground_truth.agreement_window;
        if lo == 0 || lo > hi {
            return Err(CliError::Config(format!("bad agreement_window [{lo}, {hi}]")));
        }
        let [lo, hi] = self.mds.fidelity_ks;
        if lo == 0 || lo > hi {
            return Err(CliError::Config(format!("bad mds.fidelity_ks [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// SHA-256 over the experiment settings and the bytes of every input.
    /// Locations (`data_dir`, `out_dir`) are left out so relocated runs
    /// hash the same.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut canonical = self.clone();
        canonical.data_dir = None;
        canonical.out_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical).map_err(|e| CliError::Config(e.to_string()))?);
        for p in self.inputs() {
            let full = self.resolve(&p);
            let bytes = fs::read(&full)
                .map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex(&h.finalize()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
