use spdinv::harness::{
    collect_reports, execute, execute_with, gap_table, run_ablation, run_experiment_in, AblationGrid,
    ExperimentConfig, PredictorSpec, Summary,
};
use spdinv::metrics::noise_gap;
use spdinv::predictor::EpsilonPredictor;
use spdinv::{
    generate, invert, Condition, LatentState, Method, NoiseSchedule, Result, ScheduleParams, SpdInvConfig,
};

fn small(seed: u64, trials: usize, steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::lab_default(seed);
    c.trials = trials;
    c.schedule.inference_steps = steps;
    c.save_trajectories = false;
    c.normalize();
    c
}

#[test]
fn ablation_over_k_gives_one_row_per_value() {
    let mut c = small(3, 20, 50);
    c.ablation = AblationGrid {
        k: vec![5, 25, 50],
        ..AblationGrid::default()
    };
    let rows = run_ablation(&c).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.config.k).collect::<Vec<_>>(), [5, 25, 50]);
    assert!(rows.windows(2).all(|w| w[1].mean_final_residual <= w[0].mean_final_residual));
}

#[test]
fn ablation_over_steps_rebuilds_the_schedule() {
    let mut c = small(3, 4, 50);
    c.ablation = AblationGrid {
        steps: vec![10, 75],
        ..AblationGrid::default()
    };
    let rows = run_ablation(&c).unwrap();
    assert_eq!(rows.iter().map(|r| r.config.steps).collect::<Vec<_>>(), [10, 75]);
}

#[test]
fn spdinv_beats_naive_at_checkpoints_on_most_seeds() {
    let steps = 48;
    let schedule = ScheduleParams {
        inference_steps: steps,
        ..Default::default()
    }
    .build()
    .unwrap();
    let gm = spdinv::GaussianMixture::lab_default();
    let spd = SpdInvConfig {
        steps,
        ..SpdInvConfig::with_method(Method::Spdinv)
    };
    let naive = SpdInvConfig {
        steps,
        ..SpdInvConfig::with_method(Method::Naive)
    };
    let mut good = 0;
    for seed in 0..100 {
        let c = Condition::label(1 + (seed % 2) as u32);
        let z = spdinv::harness::trial_noise(seed, 0, 2);
        let truth = generate(&z, c, &gm, &schedule, 1.0).unwrap();
        let a = noise_gap(&truth, &invert(truth.clean(), c, &gm, &schedule, &spd).unwrap()).unwrap();
        let b = noise_gap(&truth, &invert(truth.clean(), c, &gm, &schedule, &naive).unwrap()).unwrap();
        if [steps / 4, steps / 2, steps].iter().all(|t| a[*t] <= b[*t]) {
            good += 1;
        }
    }
    assert!(good >= 90, "{good}/100");
}

#[test]
fn single_step_schedule_runs_one_step_per_method() {
    let c = small(8, 2, 1);
    let e = execute(&c).unwrap();
    for r in &e.report.reports {
        assert_eq!(r.steps, 1);
        assert_eq!(r.trials[0].step_rounds.len(), 1);
        assert_eq!(r.aggregate.noise_gap.len(), 2);
    }
}

#[test]
fn schedule_hash_mismatch_refuses_pairing() {
    let gm = spdinv::GaussianMixture::lab_default();
    let s1 = ScheduleParams {
        inference_steps: 10,
        ..Default::default()
    }
    .build()
    .unwrap();
    let s2 = ScheduleParams {
        inference_steps: 10,
        beta_end: 0.03,
        ..Default::default()
    }
    .build()
    .unwrap();
    let z = LatentState::new(vec![0.1, 0.2]).unwrap();
    let truth = generate(&z, Condition::label(1), &gm, &s1, 1.0).unwrap();
    let config = SpdInvConfig {
        steps: 10,
        ..SpdInvConfig::with_method(Method::Naive)
    };
    let other = invert(truth.clean(), Condition::label(1), &gm, &s2, &config).unwrap();
    let err = noise_gap(&truth, &other).unwrap_err();
    assert_eq!(err.kind(), "trajectory_mismatch");
}

/// Mixture whose prediction turns non-finite in the right half-plane at `t = T`.
struct Poisoned(spdinv::GaussianMixture);

impl EpsilonPredictor for Poisoned {
    fn dim(&self) -> usize {
        2
    }
    fn kind(&self) -> &'static str {
        "poisoned"
    }
    fn predict(&self, z: &LatentState, t: usize, c: Condition, s: &NoiseSchedule) -> Result<LatentState> {
        if t == s.steps() && z[0] > 0.0 {
            return Ok(LatentState::filled(2, 0.0).lincomb(1.0, &LatentState::filled(2, 1e308), 10.0));
        }
        self.0.predict(z, t, c, s)
    }
    fn vjp(&self, z: &LatentState, t: usize, c: Condition, s: &NoiseSchedule, v: &LatentState) -> Result<LatentState> {
        self.0.vjp(z, t, c, s, v)
    }
}

#[test]
fn failed_trials_are_excluded_and_counted() {
    let c = small(21, 12, 10);
    let schedule = c.schedule.build().unwrap();
    let p = Poisoned(spdinv::GaussianMixture::lab_default());
    let (report, artifacts) = execute_with(&c, &p, &schedule).unwrap();
    let positive = (0..12)
        .filter(|i| spdinv::harness::trial_noise(21, *i, 2)[0] > 0.0)
        .count();
    assert!(positive > 0 && positive < 12);
    for r in &report.reports {
        assert_eq!(r.failed.len(), positive);
        assert_eq!(r.aggregate.trials_ok, 12 - positive);
        assert_eq!(r.aggregate.trials_failed, positive);
        assert!(r.failed.iter().all(|f| f.error.contains("non-finite")));
    }
    assert_eq!(artifacts.iter().filter(|a| a.truth.is_none()).count(), positive);
}

#[test]
fn a_method_failing_everywhere_fails_the_run() {
    let mut c = small(2, 3, 10);
    c.budget_matched = false;
    c.methods = vec![SpdInvConfig::with_method(Method::Naive)];
    c.normalize();
    let schedule = c.schedule.build().unwrap();
    let poisoned = spdinv::LinearModel::scalar(2, 1e300, vec![0.0, 0.0]).unwrap();
    let err = execute_with(&c, &poisoned, &schedule).unwrap_err();
    assert_eq!(err.kind(), "all_trials_failed");
}

#[test]
fn outputs_are_written_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(4, 3, 8);
    c.save_trajectories = true;
    let (e, summary) = run_experiment_in(&c, dir.path()).unwrap();
    for f in ["config.json", "report.json", "summary.json", "summary.csv", "gap.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let back = spdinv::load_trajectory(dir.path().join("trajectories/trial-0002-spdinv.traj")).unwrap();
    assert_eq!(&back, e.artifacts[2].inverted[2].as_ref().unwrap());

    let summary_back: Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary_back, summary);
    assert_eq!(summary.rows.len(), 3);
    let gaps: Vec<f64> = summary
        .ranking
        .iter()
        .map(|l| summary.rows.iter().find(|r| &r.label == l).unwrap().final_noise_gap)
        .collect();
    assert!(gaps.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(summary.ranking.last().unwrap(), "naive");

    let runs = collect_reports(dir.path()).unwrap();
    assert_eq!(runs.len(), 1);
    let table = gap_table(&runs);
    assert_eq!(table, std::fs::read_to_string(dir.path().join("gap.csv")).unwrap());
    assert_eq!(table.lines().count(), 1 + 3 * 9);
    assert!(table.starts_with("t,method,gap\n0,naive,"));
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(6, 2, 8);
    c.predictor = PredictorSpec::Zero { dim: 3 };
    let path = dir.path().join("c.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), c);
    assert!(ExperimentConfig::load(dir.path().join("missing.json")).is_err());
}

/// The headline ranking at the default settings: spdinv should have the
/// lowest final noise gap of the three methods at equal call budgets.
#[test]
fn headline_ranking_places_spdinv_first() {
    let mut c = ExperimentConfig::lab_default(20240);
    c.save_trajectories = false;
    let e = execute(&c).unwrap();
    let summary = spdinv::harness::summarize(&e.report, &c.thresholds);
    let gap = |m: Method| e.report_for(m).unwrap().aggregate.final_noise_gap;
    println!(
        "final noise gap naive {:.3e} aidi {:.3e} spdinv {:.3e}; ranking {:?}",
        gap(Method::Naive),
        gap(Method::Aidi),
        gap(Method::Spdinv),
        summary.ranking
    );
    assert_eq!(summary.ranking[0], "spdinv");
}
