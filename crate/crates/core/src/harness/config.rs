use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::load_model;
use crate::inversion::{Method, SpdInvConfig};
use crate::latent::Condition;
use crate::predictor::{
    train_mlp, EpsilonPredictor, GaussianMixture, LinearModel, MlpArchitecture, TrainingConfig, ZeroPredictor,
};
use crate::schedule::{NoiseSchedule, ScheduleParams};

/// Which predictor an experiment runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// Analytic mixture; the built-in four-component model when `mixture` is absent.
    GaussianMixture {
        #[serde(default)]
        mixture: Option<GaussianMixture>,
    },
    Linear {
        model: LinearModel,
    },
    Zero {
        dim: usize,
    },
    /// A model file written by `save_model`.
    ModelFile {
        path: PathBuf,
    },
    /// Trains an MLP on clean samples of a mixture before the trials start.
    MlpTrain {
        #[serde(default)]
        mixture: Option<GaussianMixture>,
        samples: usize,
        #[serde(default)]
        architecture: MlpArchitecture,
        #[serde(default)]
        training: TrainingConfig,
    },
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec::GaussianMixture { mixture: None }
    }
}

/// A predictor ready for use, plus the encoded model when one was trained.
pub struct BuiltPredictor {
    pub predictor: Box<dyn EpsilonPredictor>,
    pub trained_model: Option<Vec<u8>>,
}

impl PredictorSpec {
    pub fn build(&self, schedule: &NoiseSchedule) -> Result<BuiltPredictor> {
        let plain = |p: Box<dyn EpsilonPredictor>| BuiltPredictor {
            predictor: p,
            trained_model: None,
        };
        Ok(match self {
            PredictorSpec::GaussianMixture { mixture } => {
                plain(Box::new(mixture.clone().unwrap_or_else(GaussianMixture::lab_default)))
            }
            PredictorSpec::Linear { model } => plain(Box::new(model.clone())),
            PredictorSpec::Zero { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("zero predictor needs dim >= 1".into()));
                }
                plain(Box::new(ZeroPredictor::new(*dim)))
            }
            PredictorSpec::ModelFile { path } => {
                let (model, hash) = load_model(path)?;
                if let Some(hash) = hash {
                    if hash != schedule.hash() {
                        return Err(Error::InvalidConfig(format!(
                            "model {} was trained against schedule {hash}, experiment uses {}",
                            path.display(),
                            schedule.hash()
                        )));
                    }
                }
                plain(model.into_predictor())
            }
            PredictorSpec::MlpTrain {
                mixture,
                samples,
                architecture,
                training,
            } => {
                let mixture = mixture.clone().unwrap_or_else(GaussianMixture::lab_default);
                let labels: Vec<u32> = mixture.labels().collect();
                let mut rng = ChaCha8Rng::seed_from_u64(training.seed);
                rng.set_stream(3);
                let dataset = (0..*samples)
                    .map(|i| {
                        let c = if labels.is_empty() {
                            Condition::NULL
                        } else {
                            Condition::label(labels[i % labels.len()])
                        };
                        Ok((mixture.sample_clean(c, &mut rng)?, c))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let model = train_mlp(&dataset, schedule, *architecture, *training)?;
                let bytes = crate::format::encode_mlp(&model, schedule.hash());
                BuiltPredictor {
                    predictor: Box::new(model),
                    trained_model: Some(bytes),
                }
            }
        })
    }
}

/// Source and target labels of one edit trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionPair {
    pub source: Condition,
    pub target: Condition,
}

/// Pass/fail thresholds evaluated into the summary. Each check compares the
/// first method of each kind and is skipped when a participant is missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// `spdinv final gap <= gap_ratio * naive final gap`.
    pub gap_ratio: Option<f64>,
    /// Mean reconstruction MSE of spdinv no larger than naive's.
    pub reconstruction: bool,
    /// Fraction of trials on which spdinv's edit divergence is below naive's.
    pub edit_win_rate: Option<f64>,
    /// Fraction of steps on which spdinv's mean final residual is at most aidi's.
    pub budget_win_rate: Option<f64>,
    /// `|mean coupling|` of spdinv below naive's.
    pub coupling: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            gap_ratio: Some(0.75),
            reconstruction: true,
            edit_win_rate: Some(0.7),
            budget_win_rate: Some(0.6),
            coupling: true,
        }
    }
}

/// Value lists swept one parameter at a time around the base spdinv method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationGrid {
    pub k: Vec<usize>,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    pub steps: Vec<usize>,
}

impl AblationGrid {
    pub fn is_empty(&self) -> bool {
        self.k.is_empty() && self.delta.is_empty() && self.eta.is_empty() && self.steps.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.k.contains(&0) || self.steps.contains(&0) {
            return Err(Error::InvalidConfig("ablation k and steps values must be >= 1".into()));
        }
        if let Some(v) = self.delta.iter().chain(&self.eta).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("ablation delta/eta value {v} must be positive")));
        }
        Ok(())
    }
}

/// The experiment description read from a JSON config file.
///
/// The number of inversion steps comes from `schedule.inference_steps`;
/// the `steps` field of every method is overwritten with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub predictor: PredictorSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_pairs")]
    pub conditions: Vec<ConditionPair>,
    pub methods: Vec<SpdInvConfig>,
    #[serde(default = "one")]
    pub generation_guidance: f64,
    #[serde(default = "one")]
    pub edit_guidance: f64,
    #[serde(default)]
    pub budget_matched: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub ablation: AblationGrid,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub save_trajectories: bool,
}

fn default_trials() -> usize {
    100
}
fn default_pairs() -> Vec<ConditionPair> {
    vec![
        ConditionPair {
            source: Condition::label(1),
            target: Condition::label(2),
        },
        ConditionPair {
            source: Condition::label(2),
            target: Condition::label(1),
        },
    ]
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Naive, AIDI and SPDInv at default settings on the built-in mixture.
    pub fn lab_default(seed: u64) -> Self {
        Self {
            schedule: ScheduleParams::default(),
            predictor: PredictorSpec::default(),
            trials: default_trials(),
            seed,
            conditions: default_pairs(),
            methods: [Method::Naive, Method::Aidi, Method::Spdinv]
                .into_iter()
                .map(SpdInvConfig::with_method)
                .collect(),
            generation_guidance: 1.0,
            edit_guidance: 1.0,
            budget_matched: true,
            thresholds: Thresholds::default(),
            ablation: AblationGrid::default(),
            output_dir: None,
            save_trajectories: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut config: Self = serde_json::from_str(text)?;
        config.normalize();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Copies `schedule.inference_steps` into every method.
    pub fn normalize(&mut self) {
        for m in &mut self.methods {
            m.steps = self.schedule.inference_steps;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        for m in &self.methods {
            m.validate()?;
            if m.steps != self.schedule.inference_steps {
                return Err(Error::InvalidConfig(format!(
                    "method {} has T = {} but the schedule has {}",
                    m.method, m.steps, self.schedule.inference_steps
                )));
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::InvalidConfig("at least one condition pair is required".into()));
        }
        if !self.generation_guidance.is_finite() || !self.edit_guidance.is_finite() {
            return Err(Error::InvalidConfig("guidance weights must be finite".into()));
        }
        if self.budget_matched && !self.methods.iter().any(|m| m.method == Method::Spdinv) {
            return Err(Error::InvalidConfig("budget matching needs an spdinv method".into()));
        }
        self.ablation.validate()?;
        self.schedule.build()?;
        Ok(())
    }

    /// Display labels: the method name, suffixed with its position when repeated.
    pub fn labels(&self) -> Vec<String> {
        self.methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let repeated = self.methods.iter().filter(|o| o.method == m.method).count() > 1;
                if repeated {
                    format!("{}-{}", m.method, i + 1)
                } else {
                    m.method.to_string()
                }
            })
            .collect()
    }
}
