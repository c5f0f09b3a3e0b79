//! Reference selectors: an oracle that is handed the true feature union and
//! an L1-penalised linear model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{FeatureSet, GroupStructure};
use crate::model::{argmax_rows, Linear};
use crate::trainer::{self, TrainConfig, TrainOutcome};

/// Trains a single learner whose gate is frozen open on the union of the
/// truth groups and closed elsewhere. `config.model.n_learners` must be 1.
pub fn train_oracle(config: &TrainConfig, data: &LabeledDataset) -> Result<TrainOutcome> {
    let truth = data
        .truth
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{}: the oracle needs ground truth", data.name)))?;
    if config.model.n_learners != 1 {
        return Err(Error::invalid("the oracle uses exactly one learner"));
    }
    let union = truth.union();
    let mask = (0..data.n_features()).map(|k| union.contains(&k)).collect();
    let model = trainer::init_fixed_model(config, data, vec![mask])?;
    trainer::train_model(model, config, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Coefficient of the L1 norm of the weights.
    pub reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Weights with `|w| <= relevance_threshold` are zeroed after training.
    pub relevance_threshold: f64,
    pub seed: u64,
}

impl LassoConfig {
    pub const EPOCHS: usize = 8;
    pub const RELEVANCE_THRESHOLD: f64 = 0.01;

    pub fn new(reg: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            reg,
            epochs: Self::EPOCHS,
            batch_size,
            learning_rate: 0.003,
            lr_decay: 0.99,
            relevance_threshold: Self::RELEVANCE_THRESHOLD,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::invalid("lasso: reg must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("lasso: batch size must be positive"));
        }
        if !(self.relevance_threshold >= 0.0) {
            return Err(Error::invalid("lasso: relevance threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Linear scorer `x W + b` with `W: p x classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    store: ParamStore,
    layer: Linear,
    relevance_threshold: f64,
}

impl LinearModel {
    pub fn weights(&self) -> &Tensor {
        self.store.value(self.layer.weight)
    }

    pub fn bias(&self) -> &Tensor {
        self.store.value(self.layer.bias)
    }

    pub fn relevance_threshold(&self) -> f64 {
        self.relevance_threshold
    }

    /// Sets every weight with `|w| <= threshold` to exactly zero.
    fn prune(&mut self) {
        let t = self.relevance_threshold;
        for w in self.store.value_mut(self.layer.weight).data_mut() {
            if w.abs() <= t {
                *w = 0.0;
            }
        }
    }

    /// Features with at least one non-zero class weight.
    pub fn selected(&self) -> FeatureSet {
        let w = self.weights();
        (0..w.rows())
            .filter(|&k| w.row(k).iter().any(|&v| v != 0.0))
            .collect()
    }

    /// The selection as one group, or no group when nothing survived.
    pub fn groups(&self) -> GroupStructure {
        GroupStructure::new([self.selected()])
    }

    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.layer.forward(&mut g, &self.store, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(x)?))
    }
}

/// Least-squares fit of one-hot targets with an L1 penalty on the weights
/// (not the bias), trained by Adam and then pruned.
///
/// The loss per batch is `mean_n sum_c (score - onehot)^2 + reg * |W|_1`.
pub fn train_lasso(config: &LassoConfig, data: &LabeledDataset) -> Result<LinearModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid(format!("{}: training split is empty", data.name)));
    }
    let p = data.n_features();
    let classes = data.n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trainer::INIT_STREAM);
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "linear", p, classes, &mut rng);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(trainer::SHUFFLE_STREAM);
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate, config.lr_decay), &store)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let mut onehot = vec![0.0; idx.len() * classes];
            for (r, &i) in idx.iter().enumerate() {
                onehot[r * classes + data.y[i]] = 1.0;
            }
            let mut g = Graph::new();
            let x = g.constant(data.x.gather_rows(idx));
            let target = g.constant(Tensor::new(vec![idx.len(), classes], onehot)?);
            let scores = layer.forward(&mut g, &store, x)?;
            let residual = g.sub(scores, target)?;
            let sq = g.square(residual);
            let sse = g.sum(sq);
            let fit = g.scale(sse, 1.0 / idx.len() as f64);
            let w = g.param(&store, layer.weight);
            let abs = g.abs(w);
            let l1 = g.sum(abs);
            let l1 = g.scale(l1, config.reg);
            let loss = g.add(fit, l1)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            g.backward(loss, &mut store)?;
            adam.step(&mut store)?;
        }
        adam.end_epoch();
    }
    let mut model = LinearModel {
        store,
        layer,
        relevance_threshold: config.relevance_threshold,
    };
    model.prune();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Task;
    use crate::model::ModelConfig;
    use crate::objective::LossWeights;

    fn separable(n: usize, seed: u64) -> LabeledDataset {
        // Label is sign(x0 + x1); the remaining features are noise.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..8).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            y.push(usize::from(row[0] + row[1] > 0.0));
            data.extend(row);
        }
        LabeledDataset::new("sep", Tensor::new(vec![n, 8], data).unwrap(), y, 2, None).unwrap()
    }

    #[test]
    fn pruned_weights_are_exactly_zero() {
        let data = separable(2000, 1);
        let model = train_lasso(&LassoConfig::new(0.05, 20, 3), &data).unwrap();
        for &w in model.weights().data() {
            assert!(w == 0.0 || w.abs() > model.relevance_threshold());
        }
        let selected = model.selected();
        assert!(selected.contains(&0) && selected.contains(&1), "{selected:?}");
        assert_eq!(model.groups().len(), 1);
    }

    #[test]
    fn without_penalty_or_threshold_every_feature_stays() {
        let data = separable(2000, 1);
        let config = LassoConfig {
            relevance_threshold: 0.0,
            ..LassoConfig::new(0.0, 20, 3)
        };
        let model = train_lasso(&config, &data).unwrap();
        assert_eq!(model.selected().len(), 8);
        let acc = crate::metrics::accuracy(&model.predict(&data.x).unwrap(), &data.y).unwrap();
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn heavy_penalty_selects_nothing() {
        let data = separable(2000, 2);
        let model = train_lasso(&LassoConfig::new(5.0, 20, 3), &data).unwrap();
        assert!(model.selected().is_empty());
        assert!(model.groups().is_empty());
    }

    #[test]
    fn oracle_reports_the_truth_union() {
        let (train, _) = Task::Syn3.train_test(200, 10, 0).unwrap();
        let config = TrainConfig {
            model: ModelConfig {
                n_features: train.n_features(),
                n_learners: 1,
                hidden: 8,
                n_classes: 2,
                temperature: 0.1,
                threshold: 0.7,
            },
            weights: LossWeights {
                beta: 0.35,
                beta_e: 1.0,
                beta_r: 0.0,
                scale_by_sqrt_p: true,
            },
            epochs: 1,
            batch_size: 100,
            learning_rate: 0.003,
            lr_decay: 0.99,
            seed: 0,
        };
        let out = train_oracle(&config, &train).unwrap();
        assert_eq!(out.model.discovered_groups(), GroupStructure::new([[0, 1, 2]]));

        let mut two = config;
        two.model.n_learners = 2;
        assert!(train_oracle(&two, &train).is_err());
        let mut bare = train.clone();
        bare.truth = None;
        assert!(train_oracle(&config, &bare).is_err());
    }
}
