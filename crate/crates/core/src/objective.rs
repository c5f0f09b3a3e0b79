//! Training objective.
//!
//! ```text
//! L = sum_i [ CE(group_i) + beta * mean(pi_i)^2 ] + beta_e * CE(ensemble)
//!     + beta_r * sum_{i<j} pi_i . pi_j
//! ```
//!
//! Cross-entropy terms sum over the batch; the two penalties depend only
//! on the selection probabilities and enter once per step, so their weight
//! relative to the data term shrinks as the batch grows.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::TrainOutput;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Sparsity weight on the squared mean selection probability.
    pub beta: f64,
    /// Ensemble loss weight.
    pub beta_e: f64,
    /// Inter-group overlap weight.
    pub beta_r: f64,
    /// Multiply `beta` and `beta_r` (not `beta_e`) by `sqrt(p)`.
    pub scale_by_sqrt_p: bool,
}

impl LossWeights {
    /// `(beta, beta_r)` after the optional `sqrt(p)` scaling.
    pub fn effective(&self, n_features: usize) -> (f64, f64) {
        let s = if self.scale_by_sqrt_p {
            (n_features as f64).sqrt()
        } else {
            1.0
        };
        (self.beta * s, self.beta_r * s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.beta) && ok(self.beta_e) && ok(self.beta_r)) {
            return Err(Error::invalid(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Cross-entropy summed over the rows of `logits`.
fn summed_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let mean = g.softmax_cross_entropy(logits, labels)?;
    Ok(g.scale(mean, labels.len() as f64))
}

/// `CE(logits, labels) + beta_eff * mean(pi)^2`.
pub fn group_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    probabilities: Var,
    beta_eff: f64,
) -> Result<Var> {
    let ce = summed_cross_entropy(g, logits, labels)?;
    let mean = g.mean(probabilities);
    let sq = g.square(mean);
    let penalty = g.scale(sq, beta_eff);
    g.add(ce, penalty)
}

pub fn ensemble_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    summed_cross_entropy(g, logits, labels)
}

/// `sum_{i<j} pi_i . pi_j`; zero for a single learner.
pub fn overlap_loss(g: &mut Graph, probabilities: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (i, &a) in probabilities.iter().enumerate() {
        for &b in &probabilities[i + 1..] {
            let d = g.dot(a, b)?;
            total = Some(match total {
                None => d,
                Some(t) => g.add(t, d)?,
            });
        }
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

/// Scalar nodes of one objective evaluation.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub group: Vec<Var>,
    pub ensemble: Var,
    pub overlap: Var,
}

pub fn total_loss(
    g: &mut Graph,
    out: &TrainOutput,
    labels: &[usize],
    weights: &LossWeights,
    n_features: usize,
) -> Result<LossTerms> {
    let (beta, beta_r) = weights.effective(n_features);
    let mut group = Vec::with_capacity(out.group_logits.len());
    let mut total: Option<Var> = None;
    for (&logits, &pi) in out.group_logits.iter().zip(&out.probabilities) {
        let l = group_loss(g, logits, labels, pi, beta)?;
        group.push(l);
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let ensemble = ensemble_loss(g, out.ensemble_logits, labels)?;
    let overlap = overlap_loss(g, &out.probabilities)?;
    let e = g.scale(ensemble, weights.beta_e);
    let r = g.scale(overlap, beta_r);
    let t = total.ok_or_else(|| Error::invalid("total_loss: model has no learners"))?;
    let t = g.add(t, e)?;
    let total = g.add(t, r)?;
    Ok(LossTerms {
        total,
        group,
        ensemble,
        overlap,
    })
}
