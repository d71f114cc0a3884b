use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{invert_with_budget, matched_aidi_rounds, Method};
use crate::latent::LatentState;
use crate::metrics::{coupling_score, edit_divergence, Aggregate, FailedTrial, GapReport, TrialRecord};
use crate::predictor::EpsilonPredictor;
use crate::sampler::generate;
use crate::schedule::NoiseSchedule;
use crate::trajectory::Trajectory;

use super::config::{ConditionPair, ExperimentConfig};

/// Everything `report.json` holds: one report per configured method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub predictor: String,
    pub schedule_hash: String,
    pub labels: Vec<String>,
    pub reports: Vec<GapReport>,
}

/// Trajectories of one trial, kept for persistence.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub truth: Option<Trajectory>,
    /// One entry per method, `None` where the method failed.
    pub inverted: Vec<Option<Trajectory>>,
}

/// In-memory result of [`execute`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub report: RunReport,
    pub artifacts: Vec<TrialArtifacts>,
    /// Encoded model when the config asked for training.
    pub trained_model: Option<Vec<u8>>,
}

impl Experiment {
    pub fn report_for(&self, method: Method) -> Option<&GapReport> {
        self.report.reports.iter().find(|r| r.method == method)
    }
}

/// `z*_T` of a trial: standard normal, from stream `trial` of the seeded generator.
pub fn trial_noise(seed: u64, trial: usize, dim: usize) -> LatentState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let values = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    LatentState::new(values).expect("normal draws are finite")
}

pub fn trial_pair(config: &ExperimentConfig, trial: usize) -> ConditionPair {
    config.conditions[trial % config.conditions.len()]
}

struct MethodOutcome {
    trajectory: Trajectory,
    record: TrialRecord,
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    config: &ExperimentConfig,
    index: usize,
    trial: usize,
    truth: &Trajectory,
    z_star: &LatentState,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
    budget: Option<&[usize]>,
) -> Result<MethodOutcome> {
    let pair = trial_pair(config, trial);
    let method = &config.methods[index];
    let inverted = invert_with_budget(truth.clean(), pair.source, predictor, schedule, method, budget)?;
    let reconstructed = generate(inverted.noise_code(), pair.source, predictor, schedule, config.generation_guidance)?;
    let edit = edit_divergence(z_star, inverted.noise_code(), pair.target, predictor, schedule, config.edit_guidance)?;
    let coupling = match predictor.as_gaussian_mixture() {
        Some(_) => Some(coupling_score(inverted.noise_code(), pair.source, predictor, schedule)?),
        None => None,
    };
    let record = TrialRecord::measure(trial, truth, &inverted, &reconstructed, edit, coupling, pair.target)?;
    Ok(MethodOutcome {
        trajectory: inverted,
        record,
    })
}

fn run_trial(
    config: &ExperimentConfig,
    trial: usize,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
) -> (Option<Trajectory>, Vec<std::result::Result<MethodOutcome, String>>) {
    let n = config.methods.len();
    let pair = trial_pair(config, trial);
    let z_star = trial_noise(config.seed, trial, predictor.dim());
    let truth = match generate(&z_star, pair.source, predictor, schedule, config.generation_guidance) {
        Ok(t) => t,
        Err(e) => {
            let msg = format!("ground truth: {e}");
            return (None, (0..n).map(|_| Err(msg.clone())).collect());
        }
    };

    let mut outcomes: Vec<Option<std::result::Result<MethodOutcome, String>>> = (0..n).map(|_| None).collect();
    let reference = config
        .budget_matched
        .then(|| config.methods.iter().position(|m| m.method == Method::Spdinv))
        .flatten();
    let mut budget: Option<std::result::Result<Vec<usize>, String>> = None;
    if let Some(r) = reference {
        let out = run_method(config, r, trial, &truth, &z_star, predictor, schedule, None).map_err(|e| e.to_string());
        budget = Some(match &out {
            Ok(o) => Ok(matched_aidi_rounds(&o.trajectory)),
            Err(e) => Err(format!("budget reference failed: {e}")),
        });
        outcomes[r] = Some(out);
    }
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        if outcomes[i].is_some() {
            continue;
        }
        let matched = config.methods[i].method == Method::Aidi;
        let out = match (&budget, matched) {
            (Some(Err(e)), true) => Err(e.clone()),
            (Some(Ok(rounds)), true) => {
                run_method(config, i, trial, &truth, &z_star, predictor, schedule, Some(rounds)).map_err(|e| e.to_string())
            }
            _ => run_method(config, i, trial, &truth, &z_star, predictor, schedule, None).map_err(|e| e.to_string()),
        };
        outcomes[i] = Some(out);
    }
    (Some(truth), outcomes.into_iter().map(|o| o.expect("every method ran")).collect())
}

/// Runs every trial of the config against an already built predictor.
///
/// Trials run in parallel; results are reduced in trial order, so the
/// output does not depend on scheduling. Failed trials are excluded from a
/// method's aggregate and listed in its report. A method without a single
/// successful trial is an error.
pub fn execute_with(
    config: &ExperimentConfig,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
) -> Result<(RunReport, Vec<TrialArtifacts>)> {
    config.validate()?;
    let results: Vec<_> = (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, trial, predictor, schedule))
        .collect();

    let labels = config.labels();
    let n = config.methods.len();
    let mut records: Vec<Vec<TrialRecord>> = vec![Vec::new(); n];
    let mut failed: Vec<Vec<FailedTrial>> = vec![Vec::new(); n];
    let mut artifacts = Vec::with_capacity(config.trials);
    for (trial, (truth, outcomes)) in results.into_iter().enumerate() {
        let mut inverted = Vec::with_capacity(n);
        for (i, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(o) => {
                    records[i].push(o.record);
                    inverted.push(Some(o.trajectory));
                }
                Err(error) => {
                    failed[i].push(FailedTrial { trial, error });
                    inverted.push(None);
                }
            }
        }
        artifacts.push(TrialArtifacts { truth, inverted });
    }

    let mut reports = Vec::with_capacity(n);
    for (i, (trials, failed)) in records.into_iter().zip(failed).enumerate() {
        if trials.is_empty() {
            return Err(Error::AllTrialsFailed {
                method: labels[i].clone(),
                errors: failed.into_iter().map(|f| f.error).collect(),
            });
        }
        let aggregate = Aggregate::from_trials(&trials, failed.len());
        reports.push(GapReport {
            method: config.methods[i].method,
            config: config.methods[i],
            predictor: predictor.kind().to_string(),
            schedule_hash: schedule.hash().to_string(),
            steps: schedule.steps(),
            dim: predictor.dim(),
            trials,
            failed,
            aggregate,
        });
    }
    let report = RunReport {
        predictor: predictor.kind().to_string(),
        schedule_hash: schedule.hash().to_string(),
        labels,
        reports,
    };
    Ok((report, artifacts))
}

/// Builds schedule and predictor from the config and runs all trials in memory.
pub fn execute(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let schedule = config.schedule.build()?;
    let built = config.predictor.build(&schedule)?;
    let (report, artifacts) = execute_with(config, built.predictor.as_ref(), &schedule)?;
    Ok(Experiment {
        config: config.clone(),
        report,
        artifacts,
        trained_model: built.trained_model,
    })
}

/// Ground-truth sampler trajectories only, one per trial.
pub fn generate_trials(config: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    let schedule = config.schedule.build()?;
    let built = config.predictor.build(&schedule)?;
    let predictor = built.predictor.as_ref();
    (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let z = trial_noise(config.seed, trial, predictor.dim());
            generate(&z, trial_pair(config, trial).source, predictor, &schedule, config.generation_guidance)
        })
        .collect()
}
