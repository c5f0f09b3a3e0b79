//! The CompFS ensemble.
//!
//! Every learner gates the input, encodes it with a two-hidden-layer ReLU
//! MLP and predicts with its own linear head. The ensemble prediction is the
//! element-wise sum of one linear projection per learner latent, with no
//! transformation after the sum, so the aggregate is invariant to learner
//! order.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::gates::{GateBank, GateSettings};
use crate::metrics::GroupStructure;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_features: usize,
    pub n_learners: usize,
    /// Width of both hidden layers and of the latent representation.
    pub hidden: usize,
    pub n_classes: usize,
    pub temperature: f64,
    pub threshold: f64,
}

impl ModelConfig {
    pub fn gate_settings(&self) -> GateSettings {
        GateSettings {
            temperature: self.temperature,
            threshold: self.threshold,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_learners == 0 || self.hidden == 0 || self.n_classes < 2 {
            return Err(Error::invalid(format!(
                "model config needs p, N, hidden >= 1 and at least 2 classes: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Fully connected layer `x W + b` with `W: in x out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(vec![fan_in, fan_out], w).expect("linear weight shape"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::vector(b));
        Self { weight, bias }
    }

    fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}.{suffix}")))
        };
        Ok(Self {
            weight: find("weight")?,
            bias: find("bias")?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// One ensemble member: encoder `p -> h -> h -> h` and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupLearner {
    pub encoder: [Linear; 3],
    pub head: Linear,
}

impl GroupLearner {
    fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.encoder[0].forward(g, store, x)?;
        let h = g.relu(h);
        let h = self.encoder[1].forward(g, store, h)?;
        let h = g.relu(h);
        self.encoder[2].forward(g, store, h)
    }
}

/// Graph nodes produced by a training forward pass.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub ensemble_logits: Var,
    pub group_logits: Vec<Var>,
    /// Selection probabilities `sigmoid(alpha_i)` per learner.
    pub probabilities: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub ensemble_logits: Tensor,
    pub group_logits: Vec<Tensor>,
}

enum GateMode<'a> {
    Relaxed(&'a [Tensor]),
    Hard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompFsModel {
    config: ModelConfig,
    store: ParamStore,
    gates: GateBank,
    learners: Vec<GroupLearner>,
    aggregate: Vec<Linear>,
}

impl CompFsModel {
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        feature_means: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        check_means(&config, &feature_means)?;
        let mut store = ParamStore::new();
        let gates = GateBank::new(
            &mut store,
            config.n_learners,
            config.gate_settings(),
            feature_means,
            rng,
        )?;
        Ok(Self::build_networks(config, store, gates, rng))
    }

    /// A model whose gates are frozen to `masks` (one per learner).
    pub fn with_fixed_gates<R: Rng + ?Sized>(
        config: ModelConfig,
        masks: Vec<Vec<bool>>,
        feature_means: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        check_means(&config, &feature_means)?;
        if masks.len() != config.n_learners {
            return Err(Error::invalid(format!(
                "{} gate masks for {} learners",
                masks.len(),
                config.n_learners
            )));
        }
        let mut store = ParamStore::new();
        let gates = GateBank::fixed(&mut store, masks, config.gate_settings(), feature_means)?;
        Ok(Self::build_networks(config, store, gates, rng))
    }

    fn build_networks<R: Rng + ?Sized>(
        config: ModelConfig,
        mut store: ParamStore,
        gates: GateBank,
        rng: &mut R,
    ) -> Self {
        let ModelConfig {
            n_features: p,
            hidden: h,
            n_classes: c,
            ..
        } = config;
        let learners = (0..config.n_learners)
            .map(|i| GroupLearner {
                encoder: [
                    Linear::new(&mut store, &format!("learner{i}.enc0"), p, h, rng),
                    Linear::new(&mut store, &format!("learner{i}.enc1"), h, h, rng),
                    Linear::new(&mut store, &format!("learner{i}.enc2"), h, h, rng),
                ],
                head: Linear::new(&mut store, &format!("learner{i}.head"), h, c, rng),
            })
            .collect();
        let aggregate = (0..config.n_learners)
            .map(|i| Linear::new(&mut store, &format!("aggregate{i}"), h, c, rng))
            .collect();
        Self {
            config,
            store,
            gates,
            learners,
            aggregate,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn gates(&self) -> &GateBank {
        &self.gates
    }

    pub fn learners(&self) -> &[GroupLearner] {
        &self.learners
    }

    pub fn aggregate(&self) -> &[Linear] {
        &self.aggregate
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.gates.probabilities(&self.store)
    }

    /// Stochastic forward pass recorded on `g`; `noise` holds one logistic
    /// noise tensor (`batch x p`) per learner, see [`GateBank::sample_noise`].
    pub fn forward_train(&self, g: &mut Graph, x: &Tensor, noise: &[Tensor]) -> Result<TrainOutput> {
        self.forward(g, x, GateMode::Relaxed(noise))
    }

    /// Deterministic forward pass with hard gates.
    pub fn forward_eval(&self, x: &Tensor) -> Result<EvalOutput> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, GateMode::Hard)?;
        Ok(EvalOutput {
            ensemble_logits: g.value(out.ensemble_logits).clone(),
            group_logits: out.group_logits.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    fn forward(&self, g: &mut Graph, x: &Tensor, mode: GateMode<'_>) -> Result<TrainOutput> {
        let p = self.config.n_features;
        if x.shape().len() != 2 || x.shape()[1] != p {
            return Err(Error::Shape {
                op: "forward",
                left: x.shape().to_vec(),
                right: vec![p],
            });
        }
        let means = self.gates.feature_means();
        let alpha = g.param(&self.store, self.gates.logits());
        let (centered, mean) = match mode {
            GateMode::Relaxed(_) if !self.gates.is_fixed() => {
                let c: Vec<f64> = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v - means[i % p])
                    .collect();
                let c = g.constant(Tensor::new(x.shape().to_vec(), c)?);
                let m = g.constant(Tensor::vector(means.to_vec()));
                (Some(c), Some(m))
            }
            _ => (None, None),
        };

        let mut group_logits = Vec::with_capacity(self.learners.len());
        let mut probabilities = Vec::with_capacity(self.learners.len());
        let mut ensemble: Option<Var> = None;
        for (i, (learner, agg)) in self.learners.iter().zip(&self.aggregate).enumerate() {
            let gated = match (&mode, centered, mean) {
                (GateMode::Relaxed(noise), Some(c), Some(m)) => {
                    self.gates.gate_train(g, alpha, i, c, m, x, noise)?
                }
                _ => {
                    let t = self.gates.gate_eval(&self.store, i, x)?;
                    g.constant(t)
                }
            };
            let z = learner.encode(g, &self.store, gated)?;
            group_logits.push(learner.head.forward(g, &self.store, z)?);
            let projected = agg.forward(g, &self.store, z)?;
            ensemble = Some(match ensemble {
                None => projected,
                Some(acc) => g.add(acc, projected)?,
            });
            let row = g.row(alpha, i)?;
            probabilities.push(g.sigmoid(row));
        }
        Ok(TrainOutput {
            ensemble_logits: ensemble.expect("at least one learner"),
            group_logits,
            probabilities,
        })
    }

    /// Argmax of the hard-gated ensemble logits.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let out = self.forward_eval(x)?;
        Ok(argmax_rows(&out.ensemble_logits))
    }

    /// Unique non-empty hard selections across learners.
    pub fn discovered_groups(&self) -> GroupStructure {
        GroupStructure::new(self.gates.selections(&self.store))
    }

    /// Reorders learners (with their aggregate projections) by `perm`, where
    /// learner `i` of the result is learner `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.config.n_learners;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let mut out = self.clone();
        let alpha_src = self.store.value(self.gates.logits()).clone();
        let p = self.config.n_features;
        let alpha_dst = out.store.value_mut(self.gates.logits()).data_mut();
        for (dst, &src) in perm.iter().enumerate() {
            alpha_dst[dst * p..(dst + 1) * p].copy_from_slice(alpha_src.row(src));
        }
        out.learners = perm.iter().map(|&i| self.learners[i].clone()).collect();
        out.aggregate = perm.iter().map(|&i| self.aggregate[i]).collect();
        if let Some(masks) = self.gates.fixed_masks() {
            let masks = perm.iter().map(|&i| masks[i].clone()).collect();
            out.gates = GateBank::from_parts(
                self.gates.logits(),
                self.gates.settings(),
                self.gates.feature_means().to_vec(),
                Some(masks),
                &out.store,
            )?;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            feature_means: self.gates.feature_means().iter().map(|v| v.to_bits()).collect(),
            fixed_masks: self.gates.fixed_masks().map(<[_]>::to_vec),
            params: self
                .store
                .ids()
                .map(|id| {
                    let t = self.store.value(id);
                    ParamRecord {
                        name: self.store.name(id).to_string(),
                        shape: t.shape().to_vec(),
                        trainable: self.store.is_trainable(id),
                        bits: t.data().iter().map(|v| v.to_bits()).collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        let config = ckpt.config;
        config.validate()?;
        let feature_means: Vec<f64> = ckpt.feature_means.iter().map(|&b| f64::from_bits(b)).collect();
        check_means(&config, &feature_means)?;

        let mut store = ParamStore::new();
        for rec in &ckpt.params {
            let data = rec.bits.iter().map(|&b| f64::from_bits(b)).collect();
            let tensor = Tensor::new(rec.shape.clone(), data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", rec.name)))?;
            let id = store.add(rec.name.clone(), tensor);
            store.set_trainable(id, rec.trainable);
        }
        let logits = store
            .find("gates.logits")
            .ok_or_else(|| Error::Checkpoint("missing parameter gates.logits".into()))?;
        let gates = GateBank::from_parts(
            logits,
            config.gate_settings(),
            feature_means,
            ckpt.fixed_masks.clone(),
            &store,
        )?;
        let mut learners = Vec::with_capacity(config.n_learners);
        let mut aggregate = Vec::with_capacity(config.n_learners);
        for i in 0..config.n_learners {
            learners.push(GroupLearner {
                encoder: [
                    Linear::lookup(&store, &format!("learner{i}.enc0"))?,
                    Linear::lookup(&store, &format!("learner{i}.enc1"))?,
                    Linear::lookup(&store, &format!("learner{i}.enc2"))?,
                ],
                head: Linear::lookup(&store, &format!("learner{i}.head"))?,
            });
            aggregate.push(Linear::lookup(&store, &format!("aggregate{i}"))?);
        }
        if gates.n_learners() != config.n_learners {
            return Err(Error::Checkpoint(format!(
                "gate logits cover {} learners, config says {}",
                gates.n_learners(),
                config.n_learners
            )));
        }
        Ok(Self {
            config,
            store,
            gates,
            learners,
            aggregate,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ckpt)
    }
}

fn check_means(config: &ModelConfig, means: &[f64]) -> Result<()> {
    if means.len() != config.n_features {
        return Err(Error::invalid(format!(
            "{} feature means for {} features",
            means.len(),
            config.n_features
        )));
    }
    Ok(())
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub const CHECKPOINT_FORMAT: &str = "compfs-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialised model. Floating-point values are stored as IEEE-754 bit
/// patterns so that a save/load round trip is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub feature_means: Vec<u64>,
    pub fixed_masks: Option<Vec<Vec<bool>>>,
    pub params: Vec<ParamRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub bits: Vec<u64>,
}
