//! Experiment orchestration: config parsing, seeded trials, reports and ablations.

mod ablation;
mod config;
mod output;
mod run;

pub use crate::format::{load_trajectory, save_trajectory};
pub use ablation::{ablation_csv, run_ablation, write_ablation, AblationRow};
pub use config::{AblationGrid, BuiltPredictor, ConditionPair, ExperimentConfig, PredictorSpec, Thresholds};
pub use output::{
    collect_reports, evaluate_checks, gap_table, load_report, summarize, summary_csv, summary_rows, write_experiment,
    Check, Summary, SummaryRow,
};
pub use run::{execute, execute_with, generate_trials, trial_noise, trial_pair, Experiment, RunReport, TrialArtifacts};

use std::path::Path;

use crate::error::{Error, Result};

/// Runs the experiment and writes every artifact into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Experiment, Summary)> {
    let dir = config
        .output_dir
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("output_dir is not set".into()))?;
    run_experiment_in(config, dir)
}

/// Like [`run_experiment`] with an explicit output directory.
pub fn run_experiment_in(config: &ExperimentConfig, dir: &Path) -> Result<(Experiment, Summary)> {
    let experiment = execute(config)?;
    let summary = write_experiment(&experiment, dir)?;
    Ok((experiment, summary))
}
