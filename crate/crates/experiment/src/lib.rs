//! Experiment harness: synthetic CBCT datasets at several projection
//! counts, deterministic splits, the baseline / mt-c / mt-b training
//! regimes at holistic or patched scale, Dice evaluation and summaries.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod report;
pub mod run;
pub mod split;
pub mod train;

pub use config::{ExperimentConfig, Mode, PatchConfig, Scale};
pub use dataset::{build_dataset, ensure_dataset, select_recon_target, Dataset};
pub use error::{ExperimentError, Result};
pub use evaluate::{evaluate, CaseDice, Segmenter};
pub use report::{summarize, ResultRow, SummaryRow};
pub use run::{run_experiment, Outcome, RunResult};
pub use split::{split_dataset, Split};
pub use train::{train, TrainReport};
