use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{save_model, save_trajectory};
use crate::inversion::Method;
use crate::metrics::GapReport;

use super::config::Thresholds;
use super::run::{Experiment, RunReport};

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub method: Method,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub final_noise_gap: f64,
    pub reconstruction_mse: f64,
    pub mean_initial_residual: f64,
    pub mean_final_residual: f64,
    pub mean_rounds: f64,
    pub mean_predictor_calls: f64,
    pub edit_divergence: f64,
    pub coupling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// Labels ordered by final noise gap, lowest first.
    pub ranking: Vec<String>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub fn summary_rows(report: &RunReport) -> Vec<SummaryRow> {
    report
        .reports
        .iter()
        .zip(&report.labels)
        .map(|(r, label)| {
            let a = &r.aggregate;
            SummaryRow {
                label: label.clone(),
                method: r.method,
                trials_ok: a.trials_ok,
                trials_failed: a.trials_failed,
                final_noise_gap: a.final_noise_gap,
                reconstruction_mse: a.reconstruction_mse,
                mean_initial_residual: a.mean_initial_residual,
                mean_final_residual: a.mean_final_residual,
                mean_rounds: a.mean_rounds,
                mean_predictor_calls: a.mean_predictor_calls,
                edit_divergence: a.edit_divergence,
                coupling: a.coupling,
            }
        })
        .collect()
}

fn first(report: &RunReport, method: Method) -> Option<&GapReport> {
    report.reports.iter().find(|r| r.method == method)
}

/// Fraction of trials present in both reports on which `better` holds.
fn paired_rate(a: &GapReport, b: &GapReport, better: impl Fn(f64, f64) -> bool) -> f64 {
    let mut wins = 0;
    let mut total = 0;
    for ta in &a.trials {
        if let Some(tb) = b.trials.iter().find(|t| t.trial == ta.trial) {
            total += 1;
            if better(ta.edit_divergence, tb.edit_divergence) {
                wins += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wins as f64 / total as f64
    }
}

pub fn evaluate_checks(report: &RunReport, thresholds: &Thresholds) -> Vec<Check> {
    let mut checks = Vec::new();
    let spd = first(report, Method::Spdinv);
    let naive = first(report, Method::Naive);
    let aidi = first(report, Method::Aidi);
    if let (Some(s), Some(n)) = (spd, naive) {
        if let Some(ratio) = thresholds.gap_ratio {
            let value = s.aggregate.final_noise_gap / n.aggregate.final_noise_gap;
            checks.push(Check {
                name: "gap_ratio".into(),
                value,
                threshold: ratio,
                pass: s.aggregate.final_noise_gap <= ratio * n.aggregate.final_noise_gap,
            });
        }
        if thresholds.reconstruction {
            checks.push(Check {
                name: "reconstruction".into(),
                value: s.aggregate.reconstruction_mse,
                threshold: n.aggregate.reconstruction_mse,
                pass: s.aggregate.reconstruction_mse <= n.aggregate.reconstruction_mse,
            });
        }
        if let Some(rate) = thresholds.edit_win_rate {
            let value = paired_rate(s, n, |a, b| a < b);
            checks.push(Check {
                name: "edit_win_rate".into(),
                value,
                threshold: rate,
                pass: value >= rate,
            });
        }
        if thresholds.coupling {
            if let (Some(cs), Some(cn)) = (s.aggregate.coupling, n.aggregate.coupling) {
                checks.push(Check {
                    name: "coupling".into(),
                    value: cs.abs(),
                    threshold: cn.abs(),
                    pass: cs.abs() < cn.abs(),
                });
            }
        }
    }
    if let (Some(s), Some(a), Some(rate)) = (spd, aidi, thresholds.budget_win_rate) {
        let steps = &s.aggregate.step_final_residual;
        let wins = steps
            .iter()
            .zip(&a.aggregate.step_final_residual)
            .filter(|(x, y)| x <= y)
            .count();
        let value = wins as f64 / steps.len().max(1) as f64;
        checks.push(Check {
            name: "budget_win_rate".into(),
            value,
            threshold: rate,
            pass: value >= rate,
        });
    }
    checks
}

pub fn summarize(report: &RunReport, thresholds: &Thresholds) -> Summary {
    let rows = summary_rows(report);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|a, b| rows[*a].final_noise_gap.total_cmp(&rows[*b].final_noise_gap).then(a.cmp(b)));
    let checks = evaluate_checks(report, thresholds);
    Summary {
        ranking: order.into_iter().map(|i| rows[i].label.clone()).collect(),
        passed: checks.iter().all(|c| c.pass),
        rows,
        checks,
    }
}

pub(crate) fn num(v: f64) -> String {
    format!("{v:.9e}")
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "label,method,trials_ok,trials_failed,final_noise_gap,reconstruction_mse,mean_initial_residual,\
         mean_final_residual,mean_rounds,mean_predictor_calls,edit_divergence,coupling\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.method,
            r.trials_ok,
            r.trials_failed,
            num(r.final_noise_gap),
            num(r.reconstruction_mse),
            num(r.mean_initial_residual),
            num(r.mean_final_residual),
            num(r.mean_rounds),
            num(r.mean_predictor_calls),
            num(r.edit_divergence),
            r.coupling.map(num).unwrap_or_default(),
        );
    }
    out
}

/// Plot table of the mean per-step noise gap: `t,method,gap`.
///
/// With several runs the method column is prefixed by the run name.
pub fn gap_table(runs: &[(String, RunReport)]) -> String {
    let mut out = String::from("t,method,gap\n");
    let prefix = runs.len() > 1;
    for (name, run) in runs {
        for (r, label) in run.reports.iter().zip(&run.labels) {
            let label = if prefix { format!("{name}/{label}") } else { label.clone() };
            for (t, g) in r.aggregate.noise_gap.iter().enumerate() {
                let _ = writeln!(out, "{t},{label},{}", num(*g));
            }
        }
    }
    out
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `config.json`, `report.json`, `summary.json`, `summary.csv`,
/// `gap.csv`, the trained model if any, and trajectories under `trajectories/`.
pub fn write_experiment(experiment: &Experiment, dir: &Path) -> Result<Summary> {
    create_dir(dir)?;
    let summary = summarize(&experiment.report, &experiment.config.thresholds);
    write(&dir.join("config.json"), json_pretty(&experiment.config)?)?;
    write(&dir.join("report.json"), json_pretty(&experiment.report)?)?;
    write(&dir.join("summary.json"), json_pretty(&summary)?)?;
    write(&dir.join("summary.csv"), summary_csv(&summary.rows))?;
    write(
        &dir.join("gap.csv"),
        gap_table(&[(String::new(), experiment.report.clone())]),
    )?;
    if let Some(bytes) = &experiment.trained_model {
        save_model(dir.join("model.spdinv"), bytes)?;
    }
    if experiment.config.save_trajectories {
        let tdir = dir.join("trajectories");
        create_dir(&tdir)?;
        for (trial, a) in experiment.artifacts.iter().enumerate() {
            if let Some(truth) = &a.truth {
                save_trajectory(tdir.join(format!("trial-{trial:04}-truth.traj")), truth)?;
            }
            for (tr, label) in a.inverted.iter().zip(&experiment.report.labels) {
                if let Some(tr) = tr {
                    save_trajectory(tdir.join(format!("trial-{trial:04}-{label}.traj")), tr)?;
                }
            }
        }
    }
    Ok(summary)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Finds `report.json` in `dir` itself or in its immediate subdirectories,
/// sorted by name. Returns `(run name, report)` pairs.
pub fn collect_reports(dir: impl AsRef<Path>) -> Result<Vec<(String, RunReport)>> {
    let dir = dir.as_ref();
    let direct = dir.join("report.json");
    if direct.is_file() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, load_report(direct)?)]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::InvalidConfig(format!("no report.json under {}", dir.display())));
    }
    subdirs
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_report(p.join("report.json"))?))
        })
        .collect()
}
