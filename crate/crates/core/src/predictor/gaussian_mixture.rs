//! Analytic mixture-of-Gaussians predictor.
//!
//! Under the forward process each isotropic component `N(mu, s0^2 I)` becomes
//! `N(sqrt(a) mu, (a s0^2 + 1 - a) I)` with `a = alpha_bar[t]`, so the noisy
//! marginal stays a mixture and the posterior-optimal noise estimate
//! `eps*(z) = -sqrt(1 - a) * grad log p_t(z | c)` has a closed form, as does
//! its Jacobian.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};
use crate::schedule::NoiseSchedule;

use super::EpsilonPredictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
    data_variance: f64,
    conditions: BTreeMap<u32, Vec<usize>>,
}

/// Serialized form: means, optional weights, shared variance, label subsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureSpec {
    means: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    data_variance: f64,
    #[serde(default)]
    conditions: BTreeMap<u32, Vec<usize>>,
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        let weights = spec
            .weights
            .unwrap_or_else(|| vec![1.0; spec.means.len()]);
        if weights.len() != spec.means.len() {
            return Err(Error::InvalidModel(format!(
                "{} weights for {} means",
                weights.len(),
                spec.means.len()
            )));
        }
        let components = spec
            .means
            .into_iter()
            .zip(weights)
            .map(|(mean, weight)| MixtureComponent { mean, weight })
            .collect();
        GaussianMixture::new(components, spec.data_variance, spec.conditions)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(m: GaussianMixture) -> Self {
        MixtureSpec {
            weights: Some(m.components.iter().map(|c| c.weight).collect()),
            means: m.components.into_iter().map(|c| c.mean).collect(),
            data_variance: m.data_variance,
            conditions: m.conditions,
        }
    }
}

/// Per-component quantities at one `(z, t, c)`.
struct Posterior {
    /// Responsibilities, aligned with `offsets`.
    resp: Vec<f64>,
    /// `(z - sqrt(a) mu_k) / v` per active component.
    offsets: Vec<Vec<f64>>,
    /// Log of the mixture density (including the Gaussian normalizer).
    log_density: f64,
    noise_scale: f64,
    variance: f64,
}

impl GaussianMixture {
    /// Weights are normalized to sum to one; each labeled subset is
    /// renormalized when its condition is active. NULL uses every component.
    pub fn new(
        mut components: Vec<MixtureComponent>,
        data_variance: f64,
        conditions: BTreeMap<u32, Vec<usize>>,
    ) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidModel("mixture has no components".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidModel("zero-dimensional mixture".into()));
        }
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::InvalidModel(format!(
                    "component {k} has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "component {k} has a non-positive weight or non-finite mean"
                )));
            }
        }
        if !(data_variance >= 0.0 && data_variance.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "data variance {data_variance} must be finite and non-negative"
            )));
        }
        for (label, subset) in &conditions {
            if subset.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "condition {label} selects no components"
                )));
            }
            if let Some(k) = subset.iter().find(|k| **k >= components.len()) {
                return Err(Error::InvalidModel(format!(
                    "condition {label} references component {k}"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self {
            dim,
            components,
            data_variance,
            conditions,
        })
    }

    /// Four components in the plane, two per labeled condition.
    ///
    /// Condition 1 owns the components on the right half-plane, condition 2
    /// their mirror images. This is the model the experiment defaults use.
    pub fn lab_default() -> Self {
        let means = [[2.0, 0.0], [1.5, 1.5], [-2.0, 0.0], [-1.5, -1.5]];
        let components = means
            .iter()
            .map(|m| MixtureComponent {
                mean: m.to_vec(),
                weight: 1.0,
            })
            .collect();
        let conditions = BTreeMap::from([(1, vec![0, 1]), (2, vec![2, 3])]);
        Self::new(components, 0.1, conditions).expect("static mixture is valid")
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn data_variance(&self) -> f64 {
        self.data_variance
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.conditions.keys().copied()
    }

    /// Component indices and renormalized weights active under `c`.
    pub fn active(&self, c: Condition) -> Result<Vec<(usize, f64)>> {
        let indices: Vec<usize> = match c.id() {
            None => (0..self.components.len()).collect(),
            Some(id) => self
                .conditions
                .get(&id)
                .ok_or(Error::UnknownCondition(id))?
                .clone(),
        };
        let total: f64 = indices.iter().map(|k| self.components[*k].weight).sum();
        Ok(indices
            .into_iter()
            .map(|k| (k, self.components[k].weight / total))
            .collect())
    }

    /// Signal scale `sqrt(a)` and per-coordinate variance of the time-`t` marginal.
    pub fn marginal_params(&self, t: usize, schedule: &NoiseSchedule) -> (f64, f64) {
        let a = schedule.alpha_bar_at(t);
        (a.sqrt(), a * self.data_variance + 1.0 - a)
    }

    fn posterior(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Posterior> {
        z.expect_dim(self.dim)?;
        if t > schedule.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: schedule.steps(),
            });
        }
        let active = self.active(c)?;
        let (signal, variance) = self.marginal_params(t, schedule);
        let mut log_terms = Vec::with_capacity(active.len());
        let mut offsets = Vec::with_capacity(active.len());
        for (k, weight) in &active {
            let diff: Vec<f64> = z
                .as_slice()
                .iter()
                .zip(&self.components[*k].mean)
                .map(|(zi, mi)| zi - signal * mi)
                .collect();
            let sq: f64 = diff.iter().map(|x| x * x).sum();
            log_terms.push(weight.ln() - sq / (2.0 * variance));
            offsets.push(diff.into_iter().map(|x| x / variance).collect());
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= sum);
        let normalizer = -0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * variance).ln();
        Ok(Posterior {
            resp,
            offsets,
            log_density: max + sum.ln() + normalizer,
            noise_scale: (1.0 - schedule.alpha_bar_at(t)).sqrt(),
            variance,
        })
    }

    /// `log p_t(z | c)` of the exact noisy marginal.
    pub fn log_density(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<f64> {
        Ok(self.posterior(z, t, c, schedule)?.log_density)
    }

    /// Draws a sample from the time-`t` marginal under `c`.
    pub fn sample_marginal<R: rand::Rng + ?Sized>(
        &self,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<LatentState> {
        let (signal, variance) = self.marginal_params(t, schedule);
        self.sample_scaled(c, signal, variance, rng)
    }

    /// Draws clean data `x0 ~ p(x0 | c)`.
    pub fn sample_clean<R: rand::Rng + ?Sized>(&self, c: Condition, rng: &mut R) -> Result<LatentState> {
        self.sample_scaled(c, 1.0, self.data_variance, rng)
    }

    fn sample_scaled<R: rand::Rng + ?Sized>(
        &self,
        c: Condition,
        signal: f64,
        variance: f64,
        rng: &mut R,
    ) -> Result<LatentState> {
        use rand_distr::{Distribution, StandardNormal};
        let active = self.active(c)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = active[active.len() - 1].0;
        for (k, w) in &active {
            acc += w;
            if u < acc {
                chosen = *k;
                break;
            }
        }
        let sd = variance.sqrt();
        let values = self.components[chosen]
            .mean
            .iter()
            .map(|m| {
                let n: f64 = StandardNormal.sample(rng);
                signal * m + sd * n
            })
            .collect();
        Ok(LatentState::from_raw(values))
    }
}

impl EpsilonPredictor for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> &'static str {
        "gaussian_mixture"
    }

    fn predict(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<LatentState> {
        let p = self.posterior(z, t, c, schedule)?;
        let mut eps = vec![0.0; self.dim];
        for (r, off) in p.resp.iter().zip(&p.offsets) {
            for (e, o) in eps.iter_mut().zip(off) {
                *e += r * o;
            }
        }
        eps.iter_mut().for_each(|e| *e *= p.noise_scale);
        Ok(LatentState::from_raw(eps))
    }

    /// The Jacobian is `sqrt(1 - a) * (I / v - Cov_r[offsets])`, which is
    /// symmetric, so the product with `v` needs no transpose.
    fn vjp(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
        v: &LatentState,
    ) -> Result<LatentState> {
        v.expect_dim(self.dim)?;
        let p = self.posterior(z, t, c, schedule)?;
        let mut mean = vec![0.0; self.dim];
        for (r, off) in p.resp.iter().zip(&p.offsets) {
            for (m, o) in mean.iter_mut().zip(off) {
                *m += r * o;
            }
        }
        let dot = |a: &[f64]| a.iter().zip(v.as_slice()).map(|(x, y)| x * y).sum::<f64>();
        let mean_dot = dot(&mean);
        let mut out: Vec<f64> = v.as_slice().iter().map(|x| x / p.variance).collect();
        for (r, off) in p.resp.iter().zip(&p.offsets) {
            let w = r * dot(off);
            for (o, d) in out.iter_mut().zip(off) {
                *o -= w * d;
            }
        }
        for (o, m) in out.iter_mut().zip(&mean) {
            *o += mean_dot * m;
        }
        out.iter_mut().for_each(|o| *o *= p.noise_scale);
        Ok(LatentState::from_raw(out))
    }

    fn as_gaussian_mixture(&self) -> Option<&GaussianMixture> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_linear_schedule;

    fn single(mean: Vec<f64>, variance: f64) -> GaussianMixture {
        GaussianMixture::new(
            vec![MixtureComponent { mean, weight: 1.0 }],
            variance,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_closed_form() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 50).unwrap();
        let m = single(vec![0.0, 0.0, 0.0], 1.0);
        let z = LatentState::new(vec![0.3, -1.2, 2.0]).unwrap();
        for t in [0, 1, 10, 25, 50] {
            let k = (1.0 - s.alpha_bar_at(t)).sqrt();
            let eps = m.predict(&z, t, Condition::NULL, &s).unwrap();
            let v = LatentState::new(vec![1.0, 0.5, -2.0]).unwrap();
            let jv = m.vjp(&z, t, Condition::NULL, &s, &v).unwrap();
            for i in 0..3 {
                assert!((eps[i] - k * z[i]).abs() < 1e-14);
                assert!((jv[i] - k * v[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn clean_limit_vanishes() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.5]).unwrap();
        let m = GaussianMixture::lab_default();
        let z = LatentState::new(vec![5.0, -3.0]).unwrap();
        let eps = m.predict(&z, 0, Condition::label(1), &s).unwrap();
        assert!(eps.norm() < 1e-12);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 50).unwrap();
        let m = GaussianMixture::new(
            vec![
                MixtureComponent { mean: vec![1.0, -2.0], weight: 1.0 },
                MixtureComponent { mean: vec![-1.0, 2.0], weight: 1.0 },
            ],
            0.2,
            BTreeMap::new(),
        )
        .unwrap();
        let eps = m.predict(&LatentState::zeros(2), 20, Condition::NULL, &s).unwrap();
        assert!(eps.norm() < 1e-15);
    }

    #[test]
    fn single_component_condition_matches_gaussian() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 50).unwrap();
        let mut m = GaussianMixture::lab_default();
        m.conditions.insert(7, vec![1]);
        let reference = single(vec![1.5, 1.5], 0.1);
        let z = LatentState::new(vec![0.2, 0.9]).unwrap();
        for t in [1, 17, 50] {
            let a = m.predict(&z, t, Condition::label(7), &s).unwrap();
            let b = reference.predict(&z, t, Condition::NULL, &s).unwrap();
            assert!(a.sub(&b).norm() < 1e-14);
        }
    }

    #[test]
    fn validation() {
        assert!(GaussianMixture::new(vec![], 1.0, BTreeMap::new()).is_err());
        let comp = MixtureComponent { mean: vec![0.0], weight: 1.0 };
        assert!(GaussianMixture::new(vec![comp.clone()], -1.0, BTreeMap::new()).is_err());
        assert!(GaussianMixture::new(vec![comp.clone()], 1.0, BTreeMap::from([(1, vec![])])).is_err());
        assert!(GaussianMixture::new(vec![comp], 1.0, BTreeMap::from([(1, vec![3])])).is_err());
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let m = GaussianMixture::lab_default();
        assert!(matches!(
            m.predict(&LatentState::zeros(2), 3, Condition::label(9), &s),
            Err(Error::UnknownCondition(9))
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let m = GaussianMixture::lab_default();
        let text = serde_json::to_string(&m).unwrap();
        let back: GaussianMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
    }
}
