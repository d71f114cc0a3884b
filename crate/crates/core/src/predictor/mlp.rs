//! Small learned denoiser with hand-derived reverse-mode rules.
//!
//! Fixed architecture:
//!
//! ```text
//! x  = [z (d) | sin/cos time features (2F) | condition embedding (C)]
//! h1 = tanh(W1 x + b1)
//! h2 = tanh(W2 h1 + b2)
//! eps = W3 h2 + b3
//! ```
//!
//! Row 0 of the embedding table is the NULL condition, row `i` is label `i`.
//! All parameters live in one flat vector so the optimizer and the model
//! file can treat them uniformly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};
use crate::schedule::NoiseSchedule;

use super::EpsilonPredictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArchitecture {
    pub dim: usize,
    pub hidden: usize,
    /// Number of sinusoid frequencies; the time embedding has twice as many entries.
    pub time_frequencies: usize,
    pub cond_dim: usize,
    /// Largest condition label accepted; labels are `1..=labels`.
    pub labels: u32,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self {
            dim: 2,
            hidden: 48,
            time_frequencies: 4,
            cond_dim: 4,
            labels: 2,
        }
    }
}

impl MlpArchitecture {
    fn input_dim(&self) -> usize {
        self.dim + 2 * self.time_frequencies + self.cond_dim
    }

    fn layout(&self) -> Layout {
        let emb = 0;
        let w1 = emb + (self.labels as usize + 1) * self.cond_dim;
        let b1 = w1 + self.hidden * self.input_dim();
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.hidden;
        let w3 = b2 + self.hidden;
        let b3 = w3 + self.dim * self.hidden;
        Layout {
            emb,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + self.dim,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().len
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidModel("mlp dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Probability of replacing the label by NULL, so the unconditional branch is learned too.
    #[serde(default = "default_uncond")]
    pub uncond_prob: f64,
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}
fn default_uncond() -> f64 {
    0.1
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 3e-3,
            batch_size: default_batch(),
            uncond_prob: default_uncond(),
            seed: 0,
        }
    }
}

/// Hyper-parameters and measured losses of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: TrainingConfig,
    pub samples: usize,
    /// Denoising loss on a fixed probe set before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    arch: MlpArchitecture,
    params: Vec<f64>,
    init_seed: u64,
    training: Option<TrainingRecord>,
}

struct Forward {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
    row: usize,
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], bias: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            let row = &w[i * cols..(i + 1) * cols];
            bias[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn matvec_t(w: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, gi) in g.iter().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += gi * a;
        }
    }
    out
}

impl MlpDenoiser {
    /// Random initialization: weights `N(0, 1/fan_in)`, embeddings `N(0, 1)`, zero biases.
    pub fn random(arch: MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let l = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; l.len];
        let mut fill = |range: std::ops::Range<usize>, scale: f64, rng: &mut ChaCha8Rng| {
            for p in &mut params[range] {
                let n: f64 = StandardNormal.sample(rng);
                *p = scale * n;
            }
        };
        fill(l.emb..l.w1, 1.0, &mut rng);
        fill(l.w1..l.b1, (1.0 / arch.input_dim() as f64).sqrt(), &mut rng);
        fill(l.w2..l.b2, (1.0 / arch.hidden as f64).sqrt(), &mut rng);
        fill(l.w3..l.b3, (1.0 / arch.hidden as f64).sqrt(), &mut rng);
        Ok(Self {
            arch,
            params,
            init_seed: seed,
            training: None,
        })
    }

    pub fn from_parameters(arch: MlpArchitecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(Error::InvalidModel(format!(
                "expected {} parameters, got {}",
                arch.parameter_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidModel("non-finite mlp parameter".into()));
        }
        Ok(Self {
            arch,
            params,
            init_seed: 0,
            training: None,
        })
    }

    pub(crate) fn with_metadata(mut self, init_seed: u64, training: Option<TrainingRecord>) -> Self {
        self.init_seed = init_seed;
        self.training = training;
        self
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn training(&self) -> Option<&TrainingRecord> {
        self.training.as_ref()
    }

    fn condition_row(&self, c: Condition) -> Result<usize> {
        match c.id() {
            None => Ok(0),
            Some(id) if id >= 1 && id <= self.arch.labels => Ok(id as usize),
            Some(id) => Err(Error::UnknownCondition(id)),
        }
    }

    fn forward_with(&self, params: &[f64], z: &[f64], time: f64, row: usize) -> Forward {
        let a = &self.arch;
        let l = a.layout();
        let mut x = Vec::with_capacity(a.input_dim());
        x.extend_from_slice(z);
        for k in 0..a.time_frequencies {
            let phase = std::f64::consts::PI * (1u64 << k) as f64 * time;
            x.push(phase.sin());
            x.push(phase.cos());
        }
        let emb = &params[l.emb + row * a.cond_dim..l.emb + (row + 1) * a.cond_dim];
        x.extend_from_slice(emb);

        let mut h1 = matvec(&params[l.w1..l.b1], a.hidden, a.input_dim(), &x, &params[l.b1..l.w2]);
        h1.iter_mut().for_each(|h| *h = h.tanh());
        let mut h2 = matvec(&params[l.w2..l.b2], a.hidden, a.hidden, &h1, &params[l.b2..l.w3]);
        h2.iter_mut().for_each(|h| *h = h.tanh());
        let out = matvec(&params[l.w3..l.b3], a.dim, a.hidden, &h2, &params[l.b3..l.len]);
        Forward { x, h1, h2, out, row }
    }

    /// Backpropagates `g_out` through a cached forward pass. Returns the
    /// gradient with respect to the input vector `x`; parameter gradients
    /// are accumulated into `grads` when given.
    fn backward(&self, fw: &Forward, g_out: &[f64], grads: Option<&mut [f64]>) -> Vec<f64> {
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let g_h2 = matvec_t(&p[l.w3..l.b3], a.dim, a.hidden, g_out);
        let g_a2: Vec<f64> = g_h2.iter().zip(&fw.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        let g_h1 = matvec_t(&p[l.w2..l.b2], a.hidden, a.hidden, &g_a2);
        let g_a1: Vec<f64> = g_h1.iter().zip(&fw.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        let g_x = matvec_t(&p[l.w1..l.b1], a.hidden, a.input_dim(), &g_a1);

        if let Some(grads) = grads {
            let outer = |grads: &mut [f64], start: usize, left: &[f64], right: &[f64]| {
                for (i, li) in left.iter().enumerate() {
                    let row = &mut grads[start + i * right.len()..start + (i + 1) * right.len()];
                    for (g, r) in row.iter_mut().zip(right) {
                        *g += li * r;
                    }
                }
            };
            outer(grads, l.w3, g_out, &fw.h2);
            outer(grads, l.w2, &g_a2, &fw.h1);
            outer(grads, l.w1, &g_a1, &fw.x);
            for (dst, src) in [(l.b3, g_out), (l.b2, &g_a2[..]), (l.b1, &g_a1[..])] {
                for (g, s) in grads[dst..dst + src.len()].iter_mut().zip(src) {
                    *g += s;
                }
            }
            let emb_start = l.emb + fw.row * a.cond_dim;
            let emb_grad = &g_x[a.dim + 2 * a.time_frequencies..];
            for (g, s) in grads[emb_start..emb_start + a.cond_dim].iter_mut().zip(emb_grad) {
                *g += s;
            }
        }
        g_x
    }

    fn checked_forward(&self, z: &LatentState, t: usize, c: Condition, schedule: &NoiseSchedule) -> Result<Forward> {
        z.expect_dim(self.arch.dim)?;
        if t > schedule.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: schedule.steps(),
            });
        }
        let row = self.condition_row(c)?;
        Ok(self.forward_with(&self.params, z.as_slice(), schedule.time(t), row))
    }

    /// Mean denoising loss on `(x0, c)` pairs with pre-drawn `(t, noise)`.
    fn probe_loss(&self, probes: &[Probe], schedule: &NoiseSchedule) -> f64 {
        let total: f64 = probes
            .iter()
            .map(|p| {
                let fw = self.forward_with(&self.params, &p.z_t, schedule.time(p.t), p.row);
                fw.out
                    .iter()
                    .zip(&p.noise)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / self.arch.dim as f64
            })
            .sum();
        total / probes.len() as f64
    }

    /// Denoising loss of this model on a dataset, with `(t, noise)` drawn from `seed`.
    pub fn denoising_loss(
        &self,
        dataset: &[(LatentState, Condition)],
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes = dataset
            .iter()
            .map(|(x0, c)| {
                x0.expect_dim(self.arch.dim)?;
                Ok(noisy_sample(x0, self.condition_row(*c)?, schedule, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.probe_loss(&probes, schedule))
    }
}

struct Probe {
    z_t: Vec<f64>,
    noise: Vec<f64>,
    t: usize,
    row: usize,
}

fn noisy_sample(x0: &LatentState, row: usize, schedule: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Probe {
    let t = rng.random_range(1..=schedule.steps());
    let a = schedule.alpha_bar_at(t);
    let noise: Vec<f64> = (0..x0.dim()).map(|_| StandardNormal.sample(rng)).collect();
    let z_t = x0
        .as_slice()
        .iter()
        .zip(&noise)
        .map(|(x, n)| a.sqrt() * x + (1.0 - a).sqrt() * n)
        .collect();
    Probe { z_t, noise, t, row }
}

impl EpsilonPredictor for MlpDenoiser {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn predict(&self, z: &LatentState, t: usize, c: Condition, schedule: &NoiseSchedule) -> Result<LatentState> {
        Ok(LatentState::from_raw(self.checked_forward(z, t, c, schedule)?.out))
    }

    fn vjp(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
        v: &LatentState,
    ) -> Result<LatentState> {
        v.expect_dim(self.arch.dim)?;
        let fw = self.checked_forward(z, t, c, schedule)?;
        let mut g_x = self.backward(&fw, v.as_slice(), None);
        g_x.truncate(self.arch.dim);
        Ok(LatentState::from_raw(g_x))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + Self::EPS);
        }
    }
}

/// Trains a denoiser on `(x0, c)` pairs with the noise-prediction objective.
///
/// Each sample gets a uniformly drawn step `t`, fresh Gaussian noise, and
/// with probability `uncond_prob` its label replaced by NULL. Updates use
/// Adam on minibatch-mean gradients. All randomness derives from
/// `config.seed`; `epochs = 0` returns the initialization untouched.
pub fn train_mlp(
    dataset: &[(LatentState, Condition)],
    schedule: &NoiseSchedule,
    arch: MlpArchitecture,
    config: TrainingConfig,
) -> Result<MlpDenoiser> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "learning rate and batch size must be positive".into(),
        ));
    }
    let mut model = MlpDenoiser::random(arch, config.seed)?;
    let rows = dataset
        .iter()
        .map(|(x0, c)| {
            x0.expect_dim(arch.dim)?;
            model.condition_row(*c)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
    probe_rng.set_stream(1);
    let probe_count = dataset.len().min(512);
    let probes: Vec<Probe> = (0..probe_count)
        .map(|i| noisy_sample(&dataset[i].0, rows[i], schedule, &mut probe_rng))
        .collect();
    let initial_loss = model.probe_loss(&probes, schedule);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = Adam::new(model.params.len());
    let mut grads = vec![0.0; model.params.len()];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let row = if rng.random::<f64>() < config.uncond_prob { 0 } else { rows[i] };
                let probe = noisy_sample(&dataset[i].0, row, schedule, &mut rng);
                let fw = model.forward_with(&model.params, &probe.z_t, schedule.time(probe.t), row);
                let scale = 2.0 / (arch.dim as f64 * batch.len() as f64);
                let g_out: Vec<f64> = fw.out.iter().zip(&probe.noise).map(|(o, n)| scale * (o - n)).collect();
                model.backward(&fw, &g_out, Some(&mut grads));
            }
            adam.update(&mut model.params, &grads, config.learning_rate);
        }
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidModel("training produced non-finite parameters".into()));
    }
    let final_loss = model.probe_loss(&probes, schedule);
    model.training = Some(TrainingRecord {
        config,
        samples: dataset.len(),
        initial_loss,
        final_loss,
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_linear_schedule;

    fn arch() -> MlpArchitecture {
        MlpArchitecture {
            dim: 2,
            hidden: 8,
            time_frequencies: 2,
            cond_dim: 2,
            labels: 2,
        }
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let a = arch();
        let mut params = vec![0.0; a.parameter_count()];
        let n = params.len();
        params[n - 2] = 0.25;
        params[n - 1] = -1.5;
        let m = MlpDenoiser::from_parameters(a, params).unwrap();
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let z = LatentState::new(vec![3.0, -2.0]).unwrap();
        let eps = m.predict(&z, 4, Condition::label(1), &s).unwrap();
        assert_eq!(eps.as_slice(), &[0.25, -1.5]);
        let g = m.vjp(&z, 4, Condition::label(1), &s, &LatentState::filled(2, 1.0)).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_wrong_dimension_and_label() {
        let m = MlpDenoiser::random(arch(), 1).unwrap();
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        assert!(m.predict(&LatentState::zeros(3), 1, Condition::NULL, &s).is_err());
        assert!(m.predict(&LatentState::zeros(2), 1, Condition::label(3), &s).is_err());
        assert!(MlpDenoiser::from_parameters(arch(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let data = vec![(LatentState::new(vec![1.0, 0.0]).unwrap(), Condition::label(1))];
        let cfg = TrainingConfig {
            epochs: 0,
            seed: 9,
            ..TrainingConfig::default()
        };
        let trained = train_mlp(&data, &s, arch(), cfg).unwrap();
        let init = MlpDenoiser::random(arch(), 9).unwrap();
        assert_eq!(trained.parameters(), init.parameters());
        let record = trained.training().unwrap();
        assert_eq!(record.initial_loss, record.final_loss);
    }

    #[test]
    fn empty_dataset_rejected() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        assert!(matches!(
            train_mlp(&[], &s, arch(), TrainingConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }
}
