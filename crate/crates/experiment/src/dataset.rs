//! Synthetic CBCT dataset on disk:
//!
//! ```text
//! <root>/dataset.json
//! <root>/case_000/phantom.{vol,json}       source attenuation
//! <root>/case_000/mask.{vol,json}          labels 0/1/2
//! <root>/case_000/recon_np490.{vol,json}   one FDK volume per level
//! ```

use std::path::{Path, PathBuf};

use mtseg_core::{
    fdk_reconstruct, load_labels, load_scalar, make_phantom, save_labels, save_volume, simulate_projections,
    ConeBeamGeometry, LabelVolume, Volume3,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode, REFERENCE_NP};
use crate::error::{ExperimentError, Result};

const MANIFEST: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_cases: usize,
    pub dims: usize,
    pub seed: u64,
    pub levels: Vec<usize>,
    pub cases: Vec<String>,
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:03}")
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = std::fs::read(&path).map_err(ExperimentError::io(&path))?;
        let manifest = serde_json::from_slice(&text)
            .map_err(|e| ExperimentError::Dataset(format!("{}: {e}", path.display())))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn case_dir(&self, case: &str) -> PathBuf {
        self.root.join(case)
    }

    pub fn phantom_path(&self, case: &str) -> PathBuf {
        self.case_dir(case).join("phantom.vol")
    }

    pub fn mask_path(&self, case: &str) -> PathBuf {
        self.case_dir(case).join("mask.vol")
    }

    pub fn recon_path(&self, case: &str, n_p: usize) -> PathBuf {
        self.case_dir(case).join(format!("recon_np{n_p}.vol"))
    }

    pub fn load_mask(&self, case: &str) -> Result<LabelVolume> {
        Ok(load_labels(&self.mask_path(case))?)
    }

    pub fn load_phantom(&self, case: &str) -> Result<Volume3> {
        Ok(load_scalar(&self.phantom_path(case))?)
    }

    pub fn load_recon(&self, case: &str, n_p: usize) -> Result<Volume3> {
        if !self.manifest.levels.contains(&n_p) {
            return Err(ExperimentError::Dataset(format!(
                "{case}: quality level n_p={n_p} was not built (levels {:?})",
                self.manifest.levels
            )));
        }
        Ok(load_scalar(&self.recon_path(case, n_p))?)
    }
}

/// Phantom seed of each case, drawn from one stream seeded by `seed`.
pub fn case_seeds(seed: u64, n_cases: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_cases).map(|_| rng.next_u64()).collect()
}

/// Generate `n_cases` phantoms, simulate and FDK-reconstruct each at every
/// level. Deterministic in `seed`; the manifest is written last.
pub fn build_dataset(root: &Path, n_cases: usize, dims: usize, seed: u64, levels: &[usize]) -> Result<Dataset> {
    let cases: Vec<String> = (0..n_cases).map(case_id).collect();
    let manifest = DatasetManifest {
        n_cases,
        dims,
        seed,
        levels: levels.to_vec(),
        cases: cases.clone(),
    };
    let ds = Dataset {
        root: root.to_path_buf(),
        manifest,
    };
    for (case, case_seed) in cases.iter().zip(case_seeds(seed, n_cases)) {
        let dir = ds.case_dir(case);
        std::fs::create_dir_all(&dir).map_err(ExperimentError::io(&dir))?;
        let (volume, mask) = make_phantom([dims; 3], case_seed)?;
        let source = format!("phantom seed {case_seed}");
        save_volume(&volume, &ds.phantom_path(case), &source)?;
        save_labels(&mask, &ds.mask_path(case), &source)?;
        let grid = *volume.grid();
        for &n_p in levels {
            let geometry = ConeBeamGeometry::default_for(&grid, n_p);
            let projections = simulate_projections(&volume, &geometry)?;
            let recon = fdk_reconstruct(&projections, grid.dims, grid.spacing)?;
            save_volume(&recon, &ds.recon_path(case, n_p), &format!("fdk of {source}, n_p {n_p}"))?;
        }
    }
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    crate::report::write_atomic(&path, text.as_bytes())?;
    Ok(ds)
}

/// Open the dataset the config describes, building it when absent. A
/// dataset built with other parameters is an error rather than overwritten.
pub fn ensure_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let root = &cfg.dataset_root;
    if !root.join(MANIFEST).exists() {
        return build_dataset(root, cfg.n_cases, cfg.dims, cfg.seed, &cfg.levels);
    }
    let ds = Dataset::open(root)?;
    let m = &ds.manifest;
    if m.n_cases != cfg.n_cases || m.dims != cfg.dims || m.seed != cfg.seed {
        return Err(ExperimentError::Dataset(format!(
            "{} holds {} cases of {}^3 from seed {}, config asks for {} of {}^3 from seed {}",
            root.display(),
            m.n_cases,
            m.dims,
            m.seed,
            cfg.n_cases,
            cfg.dims,
            cfg.seed
        )));
    }
    if let Some(l) = cfg.levels.iter().find(|l| !m.levels.contains(l)) {
        return Err(ExperimentError::Dataset(format!(
            "{} lacks quality level n_p={l} (has {:?})",
            root.display(),
            m.levels
        )));
    }
    Ok(ds)
}

/// The volume the reconstruction head learns: none for the baseline, the
/// input quality for mt-c, the reference quality for mt-b.
pub fn select_recon_target(ds: &Dataset, mode: Mode, case: &str, n_p: usize) -> Result<Option<Volume3>> {
    match mode {
        Mode::Baseline => Ok(None),
        Mode::MtCurrent => ds.load_recon(case, n_p).map(Some),
        Mode::MtBest => ds.load_recon(case, REFERENCE_NP).map(Some),
    }
}
