//! Experiment configuration and its JSON form. Every field has a default;
//! the defaults table lives in `Default for ExperimentConfig`.

use std::fmt;
use std::path::{Path, PathBuf};

use mtseg_core::PatchSpec;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

/// Projection counts the dataset builder supports; 490 is the reference.
pub const SUPPORTED_NP: [usize; 5] = [490, 256, 128, 64, 32];
pub const REFERENCE_NP: usize = 490;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "baseline")]
    Baseline,
    /// Reconstruct the current-quality input.
    #[serde(rename = "mt-c")]
    MtCurrent,
    /// Reconstruct the best-quality volume.
    #[serde(rename = "mt-b")]
    MtBest,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::MtCurrent, Mode::MtBest];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::MtCurrent => "mt-c",
            Mode::MtBest => "mt-b",
        }
    }

    pub fn multitask(self) -> bool {
        self != Mode::Baseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (baseline, mt-c, mt-b)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Whole volumes at half resolution.
    Holistic,
    /// Full-resolution patches, re-aggregated at inference.
    Patched,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Holistic => "holistic",
            Scale::Patched => "patched",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "holistic" => Ok(Scale::Holistic),
            "patched" => Ok(Scale::Patched),
            _ => Err(format!("unknown scale {s:?} (holistic, patched)")),
        }
    }
}

/// Cubic patch geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub size: usize,
    pub stride: usize,
    pub pad_value: f32,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: 16,
            stride: 16,
            pad_value: 0.0,
        }
    }
}

impl PatchConfig {
    pub fn spec(&self) -> PatchSpec {
        PatchSpec {
            size: [self.size; 3],
            stride: [self.stride; 3],
            pad_value: self.pad_value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub scale: Scale,
    pub n_p: usize,
    pub alpha: f64,
    /// Train, validation, test.
    pub split_ratios: [f64; 3],
    pub repeats: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None`: 1 for holistic, 2 for patched.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub patch: PatchConfig,
    /// Training patches drawn per training case and epoch (patched scale).
    pub samples_per_case: usize,
    pub threshold: f32,
    pub encoder_filters: Vec<usize>,
    pub dataset_root: PathBuf,
    pub results_dir: PathBuf,
    pub n_cases: usize,
    /// Edge length of the cubic phantoms.
    pub dims: usize,
    /// Projection counts reconstructed when the dataset is built.
    pub levels: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Baseline,
            scale: Scale::Patched,
            n_p: REFERENCE_NP,
            alpha: 0.8,
            split_ratios: [0.7, 0.2, 0.1],
            repeats: 4,
            epochs: 40,
            learning_rate: 1e-3,
            batch_size: None,
            seed: 0,
            patch: PatchConfig::default(),
            samples_per_case: 3,
            threshold: 0.5,
            encoder_filters: vec![8, 16, 32, 64],
            dataset_root: PathBuf::from("data"),
            results_dir: PathBuf::from("results"),
            n_cases: 20,
            dims: 32,
            levels: SUPPORTED_NP.to_vec(),
        }
    }
}

fn bad<T>(key: &str, detail: impl fmt::Display) -> Result<T> {
    Err(ExperimentError::Config(format!("key `{key}`: {detail}")))
}

impl ExperimentConfig {
    /// Parse and validate. Errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                ExperimentError::Config(inner.to_string())
            } else {
                ExperimentError::Config(format!("key `{path}`: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative paths inside resolve against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(ExperimentError::io(path))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset_root = base.join(&cfg.dataset_root);
        cfg.results_dir = base.join(&cfg.results_dir);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.scale {
            Scale::Holistic => 1,
            Scale::Patched => 2,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_NP.contains(&self.n_p) {
            return bad("n_p", format!("{} is not one of {SUPPORTED_NP:?}", self.n_p));
        }
        if !self.levels.contains(&self.n_p) {
            return bad("levels", format!("must include n_p = {}", self.n_p));
        }
        if !self.levels.contains(&REFERENCE_NP) {
            return bad("levels", format!("must include the reference level {REFERENCE_NP}"));
        }
        if let Some(l) = self.levels.iter().find(|l| !SUPPORTED_NP.contains(l)) {
            return bad("levels", format!("{l} is not one of {SUPPORTED_NP:?}"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", format!("{} outside [0, 1]", self.alpha));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|&r| !(r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad("split_ratios", format!("{:?} must be non-negative and sum to 1", self.split_ratios));
        }
        let sizes = crate::split::split_sizes(self.n_cases, self.split_ratios);
        if sizes.iter().any(|&s| s == 0) {
            return bad("n_cases", format!("{} cases give an empty split {sizes:?}", self.n_cases));
        }
        if self.repeats == 0 {
            return bad("repeats", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size", "must be at least 1");
        }
        if self.samples_per_case == 0 {
            return bad("samples_per_case", "must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold", "must lie in (0, 1)");
        }
        if let Err(e) = self.patch.spec().validate() {
            return bad("patch", e);
        }
        if self.encoder_filters.len() != 4 || self.encoder_filters.contains(&0) {
            return bad("encoder_filters", "needs four positive filter counts");
        }
        if self.dims < mtseg_core::phantom::MIN_PHANTOM_DIM {
            return bad("dims", format!("phantoms need at least {} voxels", mtseg_core::phantom::MIN_PHANTOM_DIM));
        }
        if self.scale == Scale::Holistic && self.dims % 16 != 0 {
            return bad("dims", "holistic scale halves the volume, so dims must be a multiple of 16");
        }
        Ok(())
    }
}
