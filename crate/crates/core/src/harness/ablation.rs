use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{Method, SpdInvConfig};

use super::config::ExperimentConfig;
use super::output::{create_dir, num};
use super::run::execute_with;

/// One grid point: the base spdinv method with a single parameter changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub parameter: String,
    pub value: f64,
    pub config: SpdInvConfig,
    pub trials_ok: usize,
    pub trials_failed: usize,
    /// Failed trials whose error was a tripped divergence guard.
    pub guard_trips: usize,
    pub final_noise_gap: f64,
    pub mean_initial_residual: f64,
    pub mean_final_residual: f64,
    pub mean_rounds: f64,
    pub mean_predictor_calls: f64,
}

fn base_method(config: &ExperimentConfig) -> SpdInvConfig {
    let mut base = config
        .methods
        .iter()
        .find(|m| m.method == Method::Spdinv)
        .copied()
        .unwrap_or_else(|| SpdInvConfig::with_method(Method::Spdinv));
    base.steps = config.schedule.inference_steps;
    base
}

fn grid_points(config: &ExperimentConfig) -> Vec<(String, f64, ExperimentConfig)> {
    let base = base_method(config);
    let variant = |f: &dyn Fn(&mut ExperimentConfig, &mut SpdInvConfig)| {
        let mut c = config.clone();
        let mut m = base;
        f(&mut c, &mut m);
        m.steps = c.schedule.inference_steps;
        c.methods = vec![m];
        c.budget_matched = false;
        c
    };
    let g = &config.ablation;
    let mut points = Vec::new();
    for &k in &g.k {
        points.push(("k".to_string(), k as f64, variant(&|_, m| m.k = k)));
    }
    for &delta in &g.delta {
        points.push(("delta".to_string(), delta, variant(&|_, m| m.delta = delta)));
    }
    for &eta in &g.eta {
        points.push(("eta".to_string(), eta, variant(&|_, m| m.eta = eta)));
    }
    for &steps in &g.steps {
        points.push(("steps".to_string(), steps as f64, variant(&|c, _| c.schedule.inference_steps = steps)));
    }
    points
}

/// Sweeps each ablation list separately. Rows come in the order k, delta,
/// eta, steps, each in the listed value order. A grid point on which every
/// trial fails is reported with its failure counts and NaN statistics
/// instead of aborting the sweep.
pub fn run_ablation(config: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    config.validate()?;
    if config.ablation.is_empty() {
        return Err(Error::InvalidConfig("ablation grid is empty".into()));
    }
    let built = config.predictor.build(&config.schedule.build()?)?;
    let predictor = built.predictor.as_ref();
    let mut rows = Vec::new();
    for (parameter, value, point) in grid_points(config) {
        let schedule = point.schedule.build()?;
        let method = point.methods[0];
        let row = match execute_with(&point, predictor, &schedule) {
            Ok((report, _)) => {
                let r = &report.reports[0];
                let a = &r.aggregate;
                AblationRow {
                    parameter,
                    value,
                    config: method,
                    trials_ok: a.trials_ok,
                    trials_failed: a.trials_failed,
                    guard_trips: r.failed.iter().filter(|f| f.error.contains("divergence")).count(),
                    final_noise_gap: a.final_noise_gap,
                    mean_initial_residual: a.mean_initial_residual,
                    mean_final_residual: a.mean_final_residual,
                    mean_rounds: a.mean_rounds,
                    mean_predictor_calls: a.mean_predictor_calls,
                }
            }
            Err(Error::AllTrialsFailed { errors, .. }) => AblationRow {
                parameter,
                value,
                config: method,
                trials_ok: 0,
                trials_failed: errors.len(),
                guard_trips: errors.iter().filter(|e| e.contains("divergence")).count(),
                final_noise_gap: f64::NAN,
                mean_initial_residual: f64::NAN,
                mean_final_residual: f64::NAN,
                mean_rounds: f64::NAN,
                mean_predictor_calls: f64::NAN,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "parameter,value,k,delta,eta,steps,trials_ok,trials_failed,guard_trips,final_noise_gap,\
         mean_initial_residual,mean_final_residual,mean_rounds,mean_predictor_calls\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.parameter,
            num(r.value),
            r.config.k,
            num(r.config.delta),
            num(r.config.eta),
            r.config.steps,
            r.trials_ok,
            r.trials_failed,
            r.guard_trips,
            num(r.final_noise_gap),
            num(r.mean_initial_residual),
            num(r.mean_final_residual),
            num(r.mean_rounds),
            num(r.mean_predictor_calls),
        );
    }
    out
}

/// Writes `ablation.csv` into `dir`.
pub fn write_ablation(rows: &[AblationRow], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("ablation.csv");
    std::fs::write(&path, ablation_csv(rows)).map_err(|e| Error::io(&path, e))
}
