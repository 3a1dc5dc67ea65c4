//! One configuration end to end: dataset, split, `repeats` trainings,
//! evaluation and result files.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::ensure_dataset;
use crate::error::Result;
use crate::evaluate::{evaluate, CaseDice};
use crate::report::{
    summarize, write_atomic, write_results_csv, write_summary_csv, write_summary_json, ResultRow, SummaryRow,
    RESULTS_FILE, SUMMARY_CSV, SUMMARY_JSON,
};
use crate::split::{fingerprint, split_dataset, Split};
use crate::train::{load_case, train, CaseData, TrainReport, CHANNELS};

pub const RUNS_FILE: &str = "runs.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Digest of the configuration without its paths.
    pub config_fingerprint: String,
    pub split_fingerprint: String,
    pub seed: u64,
    pub cases: Vec<CaseDice>,
    pub training: TrainReport,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub split: Split,
    pub runs: Vec<RunResult>,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

pub fn config_fingerprint(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.dataset_root = Default::default();
    c.results_dir = Default::default();
    fingerprint(c.to_json().as_bytes())
}

/// Training seed of repeat `r`.
pub fn repeat_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    cfg.seed.wrapping_add(r as u64)
}

fn load_all(ds: &crate::dataset::Dataset, cfg: &ExperimentConfig, ids: &[String]) -> Result<Vec<CaseData>> {
    ids.iter().map(|id| load_case(ds, cfg, id)).collect()
}

/// Run every repeat and write `results.csv`, `summary.csv`,
/// `summary.json`, `runs.json` and one best checkpoint per seed into
/// `results_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let ds = ensure_dataset(cfg)?;
    let split = split_dataset(&ds.manifest.cases, cfg.split_ratios, cfg.seed);
    let train_cases = load_all(&ds, cfg, &split.train)?;
    let val_cases = load_all(&ds, cfg, &split.val)?;
    let test_cases = load_all(&ds, cfg, &split.test)?;
    let spec = cfg.patch.spec();

    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut rows = Vec::new();
    for r in 0..cfg.repeats {
        let seed = repeat_seed(cfg, r);
        let start = Instant::now();
        let (model, report) = train(cfg, &train_cases, &val_cases, seed)?;
        let cases = evaluate(&model, &test_cases, cfg.scale, &spec, cfg.threshold)?;
        let wall_clock_s = start.elapsed().as_secs_f64();
        std::fs::create_dir_all(&cfg.results_dir).map_err(crate::error::ExperimentError::io(&cfg.results_dir))?;
        model.save(&cfg.results_dir.join(format!("model_seed{seed}")))?;
        for c in &cases {
            for (channel, &dice) in CHANNELS.iter().zip(&c.dice) {
                rows.push(ResultRow {
                    mode: cfg.mode,
                    scale: cfg.scale,
                    n_p: cfg.n_p,
                    seed,
                    case_id: c.case_id.clone(),
                    channel: channel.to_string(),
                    dice,
                });
            }
        }
        runs.push(RunResult {
            config_fingerprint: config_fingerprint(cfg),
            split_fingerprint: split.fingerprint(),
            seed,
            cases,
            training: report,
            wall_clock_s,
        });
    }

    let summary = summarize(&rows);
    let dir = &cfg.results_dir;
    write_results_csv(&dir.join(RESULTS_FILE), &rows)?;
    write_summary_csv(&dir.join(SUMMARY_CSV), &summary)?;
    write_summary_json(&dir.join(SUMMARY_JSON), &summary)?;
    let runs_json = serde_json::to_string_pretty(&runs).expect("runs serialize");
    write_atomic(&dir.join(RUNS_FILE), runs_json.as_bytes())?;
    Ok(Outcome {
        split,
        runs,
        rows,
        summary,
    })
}
