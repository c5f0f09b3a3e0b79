//! Relaxed-Bernoulli feature gates with mean imputation.
//!
//! Each learner owns one row of selection logits `alpha`; its selection
//! probabilities are `pi = sigmoid(alpha)`. During training a relaxed gate
//!
//! ```text
//! m = sigmoid((logit(pi) + logit(u)) / tau),   u ~ Uniform(0, 1)
//! ```
//!
//! is sampled per sample and per feature, and the gated input is
//! `m * x + (1 - m) * mean(x)`. At evaluation time the gate is the hard
//! indicator `pi > threshold`.
//!
//! Because `logit(sigmoid(alpha)) == alpha`, the training path feeds `alpha`
//! directly into the relaxation and never takes the log of a saturated
//! probability. It also draws the noise as `exp(-logit(u) / tau)` so the
//! per-element work is a power and a division instead of a log and an exp.

use rand::Rng;

use crate::autodiff::{stable_sigmoid, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::FeatureSet;

/// Uniform draws are clamped into `[U_EPS, 1 - U_EPS]` before the logit.
pub const U_EPS: f64 = 1e-7;

/// Half-width of the uniform initialisation of the selection logits.
pub const INIT_LOGIT_RANGE: f64 = 0.1;

fn logit(v: f64) -> f64 {
    (v / (1.0 - v)).ln()
}

/// Draws one relaxed gate value from probability `pi` and uniform `u`.
pub fn sample_relaxed_gate(pi: &[f64], u: &[f64], tau: f64) -> Result<Vec<f64>> {
    if pi.len() != u.len() {
        return Err(Error::Shape {
            op: "sample_relaxed_gate",
            left: vec![pi.len()],
            right: vec![u.len()],
        });
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("sample_relaxed_gate: temperature must be positive"));
    }
    let open = |v: f64| v > 0.0 && v < 1.0;
    if let Some(k) = (0..pi.len()).find(|&k| !open(pi[k]) || !open(u[k])) {
        return Err(Error::invalid(format!(
            "sample_relaxed_gate: pi[{k}] = {} and u[{k}] = {} must lie strictly inside (0, 1)",
            pi[k], u[k]
        )));
    }
    Ok(pi
        .iter()
        .zip(u)
        .map(|(&p, &uk)| stable_sigmoid((logit(p) + logit(uk)) / tau))
        .collect())
}

/// `m * x + (1 - m) * x_mean`, elementwise.
pub fn gate(x: &[f64], m: &[f64], x_mean: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.len() || x.len() != x_mean.len() {
        return Err(Error::Shape {
            op: "gate",
            left: vec![x.len()],
            right: vec![m.len(), x_mean.len()],
        });
    }
    Ok(x.iter()
        .zip(m)
        .zip(x_mean)
        .map(|((&xk, &mk), &bk)| mk * xk + (1.0 - mk) * bk)
        .collect())
}

/// Indices with `pi > threshold` (strict).
pub fn hard_select(pi: &[f64], threshold: f64) -> FeatureSet {
    pi.iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(k, _)| k)
        .collect()
}

/// Standard logistic noise `logit(u)` with the uniform draw clamped.
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(U_EPS, 1.0 - U_EPS);
            logit(u)
        })
        .collect()
}

/// `exp(-logit(u) / tau) = ((1 - u) / u)^(1 / tau)` for clamped uniform
/// draws `u`: the per-element noise term of [`Graph::relaxed_gate`], which
/// turns the relaxation into `1 / (1 + exp(-alpha / tau) * factor)`.
pub fn gate_noise_factors<R: Rng + ?Sized>(rng: &mut R, len: usize, tau: f64) -> Vec<f64> {
    let k = 1.0 / tau;
    let integral = k.fract() == 0.0 && k <= 64.0;
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(U_EPS, 1.0 - U_EPS);
            let odds = (1.0 - u) / u;
            if integral {
                pow_small(odds, k as u32)
            } else {
                odds.powf(k)
            }
        })
        .collect()
}

fn pow_small(mut base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateSettings {
    pub temperature: f64,
    pub threshold: f64,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            threshold: 0.7,
        }
    }
}

/// Selection logits for `N` learners over `p` features plus the frozen
/// feature means used for imputation.
#[derive(Clone, Debug, PartialEq)]
pub struct GateBank {
    logits: ParamId,
    n_learners: usize,
    n_features: usize,
    settings: GateSettings,
    feature_means: Vec<f64>,
    fixed_masks: Option<Vec<Vec<bool>>>,
}

impl GateBank {
    /// Trainable gates with logits drawn from `Uniform(-0.1, 0.1)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_learners: usize,
        settings: GateSettings,
        feature_means: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        validate_settings(&settings)?;
        let p = feature_means.len();
        if n_learners == 0 || p == 0 {
            return Err(Error::invalid("gate bank needs at least one learner and one feature"));
        }
        let data = (0..n_learners * p)
            .map(|_| rng.gen_range(-INIT_LOGIT_RANGE..INIT_LOGIT_RANGE))
            .collect();
        let logits = store.add("gates.logits", Tensor::new(vec![n_learners, p], data)?);
        Ok(Self {
            logits,
            n_learners,
            n_features: p,
            settings,
            feature_means,
            fixed_masks: None,
        })
    }

    /// Gates frozen to the given binary masks, used in both training and
    /// evaluation. The stored logits are set to +/-`FROZEN_LOGIT` so that
    /// the reported probabilities agree with the masks.
    pub fn fixed(
        store: &mut ParamStore,
        masks: Vec<Vec<bool>>,
        settings: GateSettings,
        feature_means: Vec<f64>,
    ) -> Result<Self> {
        validate_settings(&settings)?;
        let p = feature_means.len();
        if masks.is_empty() || masks.iter().any(|m| m.len() != p) {
            return Err(Error::invalid(format!(
                "fixed gates: every mask must cover all {p} features"
            )));
        }
        let data = masks
            .iter()
            .flatten()
            .map(|&on| if on { FROZEN_LOGIT } else { -FROZEN_LOGIT })
            .collect();
        let logits = store.add("gates.logits", Tensor::new(vec![masks.len(), p], data)?);
        store.set_trainable(logits, false);
        Ok(Self {
            logits,
            n_learners: masks.len(),
            n_features: p,
            settings,
            feature_means,
            fixed_masks: Some(masks),
        })
    }

    /// Re-attaches a bank to logits already present in `store`.
    pub(crate) fn from_parts(
        logits: ParamId,
        settings: GateSettings,
        feature_means: Vec<f64>,
        fixed_masks: Option<Vec<Vec<bool>>>,
        store: &ParamStore,
    ) -> Result<Self> {
        validate_settings(&settings)?;
        let shape = store.value(logits).shape();
        if shape.len() != 2 || shape[1] != feature_means.len() {
            return Err(Error::Shape {
                op: "gate bank",
                left: shape.to_vec(),
                right: vec![feature_means.len()],
            });
        }
        Ok(Self {
            logits,
            n_learners: shape[0],
            n_features: shape[1],
            settings,
            feature_means,
            fixed_masks,
        })
    }

    pub fn logits(&self) -> ParamId {
        self.logits
    }

    pub fn n_learners(&self) -> usize {
        self.n_learners
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn settings(&self) -> GateSettings {
        self.settings
    }

    pub fn feature_means(&self) -> &[f64] {
        &self.feature_means
    }

    pub fn fixed_masks(&self) -> Option<&[Vec<bool>]> {
        self.fixed_masks.as_deref()
    }

    pub fn is_fixed(&self) -> bool {
        self.fixed_masks.is_some()
    }

    /// `sigmoid(alpha)` per learner.
    pub fn probabilities(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let alpha = store.value(self.logits);
        (0..self.n_learners)
            .map(|i| alpha.row(i).iter().map(|&a| stable_sigmoid(a)).collect())
            .collect()
    }

    /// Hard evaluation-time selection for each learner.
    pub fn selections(&self, store: &ParamStore) -> Vec<FeatureSet> {
        match &self.fixed_masks {
            Some(masks) => masks
                .iter()
                .map(|m| m.iter().enumerate().filter(|(_, &on)| on).map(|(k, _)| k).collect())
                .collect(),
            None => self
                .probabilities(store)
                .iter()
                .map(|pi| hard_select(pi, self.settings.threshold))
                .collect(),
        }
    }

    /// Per-learner gate noise for a batch: `N` tensors of `batch x p`
    /// holding [`gate_noise_factors`] at this bank's temperature.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<Tensor> {
        if self.is_fixed() {
            return Vec::new();
        }
        let tau = self.settings.temperature;
        (0..self.n_learners)
            .map(|_| {
                Tensor::new(vec![batch, self.n_features], gate_noise_factors(rng, batch * self.n_features, tau))
                    .expect("noise shape")
            })
            .collect()
    }

    /// Records the relaxed gate for `learner` on the graph and returns the
    /// gated input. `alpha` is the logits node, `centered` is `x - mean`
    /// and `mean` the feature-mean vector, both as constants.
    pub fn gate_train(
        &self,
        g: &mut Graph,
        alpha: Var,
        learner: usize,
        centered: Var,
        mean: Var,
        x: &Tensor,
        noise: &[Tensor],
    ) -> Result<Var> {
        if let Some(masks) = &self.fixed_masks {
            let gated = self.apply_mask(x, &masks[learner])?;
            return Ok(g.constant(gated));
        }
        let noise = noise.get(learner).ok_or_else(|| {
            Error::invalid(format!("gate noise missing for learner {learner}"))
        })?;
        let row = g.row(alpha, learner)?;
        g.relaxed_gate(row, noise, self.settings.temperature, centered, mean)
    }

    /// Deterministic gated input for `learner` using the hard selection.
    pub fn gate_eval(&self, store: &ParamStore, learner: usize, x: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = match &self.fixed_masks {
            Some(masks) => masks[learner].clone(),
            None => store
                .value(self.logits)
                .row(learner)
                .iter()
                .map(|&a| stable_sigmoid(a) > self.settings.threshold)
                .collect(),
        };
        self.apply_mask(x, &mask)
    }

    fn apply_mask(&self, x: &Tensor, mask: &[bool]) -> Result<Tensor> {
        if x.row_len() != self.n_features {
            return Err(Error::Shape {
                op: "gate",
                left: x.shape().to_vec(),
                right: vec![self.n_features],
            });
        }
        let p = self.n_features;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = i % p;
                if mask[k] {
                    v
                } else {
                    self.feature_means[k]
                }
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Logit magnitude stored for fixed gates; `sigmoid(20) > 1 - 3e-9`.
pub const FROZEN_LOGIT: f64 = 20.0;

fn validate_settings(s: &GateSettings) -> Result<()> {
    if !(s.temperature > 0.0) {
        return Err(Error::invalid("gate temperature must be positive"));
    }
    if !(s.threshold > 0.0 && s.threshold < 1.0) {
        return Err(Error::invalid("gate threshold must lie in (0, 1)"));
    }
    Ok(())
}

/// Per-feature means of a `n x p` matrix.
pub fn column_means(x: &Tensor) -> Vec<f64> {
    let p = x.row_len();
    let n = x.rows();
    let mut means = vec![0.0; p];
    for r in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    means
}
