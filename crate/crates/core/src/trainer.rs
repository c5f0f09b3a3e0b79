//! Minibatch training and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::gates::column_means;
use crate::metrics::{self, GroupStructure};
use crate::model::{CompFsModel, ModelConfig};
use crate::objective::{total_loss, LossWeights};

// Substreams of the per-run generator. Keeping them apart means changing
// the number of learners never changes the data order. Streams 0 and 1
// belong to the train/test generators, so a run can share one seed.
pub(crate) const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
pub(crate) const INIT_STREAM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr decay must lie in (0, 1]"));
        }
        self.weights.validate()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CompFsModel,
    /// Mean total loss over the batches of each epoch.
    pub loss_history: Vec<f64>,
}

fn check_data(config: &TrainConfig, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid(format!("{}: training split is empty", data.name)));
    }
    if data.n_features() != config.model.n_features {
        return Err(Error::invalid(format!(
            "{}: data has {} features, config expects {}",
            data.name,
            data.n_features(),
            config.model.n_features
        )));
    }
    if data.n_classes > config.model.n_classes {
        return Err(Error::invalid(format!(
            "{}: data has {} classes, config expects {}",
            data.name, data.n_classes, config.model.n_classes
        )));
    }
    Ok(())
}

/// Freshly initialised model with gate means taken from `data`.
pub fn init_model(config: &TrainConfig, data: &LabeledDataset) -> Result<CompFsModel> {
    config.validate()?;
    check_data(config, data)?;
    CompFsModel::new(config.model, column_means(&data.x), &mut config.rng(INIT_STREAM))
}

/// Model whose learners see only the features in `masks`; used by the oracle.
pub fn init_fixed_model(
    config: &TrainConfig,
    data: &LabeledDataset,
    masks: Vec<Vec<bool>>,
) -> Result<CompFsModel> {
    config.validate()?;
    check_data(config, data)?;
    CompFsModel::with_fixed_gates(config.model, masks, column_means(&data.x), &mut config.rng(INIT_STREAM))
}

pub fn train(config: &TrainConfig, data: &LabeledDataset) -> Result<TrainOutcome> {
    let model = init_model(config, data)?;
    train_model(model, config, data)
}

/// Runs the epoch loop on an already initialised model.
pub fn train_model(
    mut model: CompFsModel,
    config: &TrainConfig,
    data: &LabeledDataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_data(config, data)?;
    let p = config.model.n_features;
    let mut shuffle_rng = config.rng(SHUFFLE_STREAM);
    let mut noise_rng = config.rng(NOISE_STREAM);
    let mut adam = Adam::new(
        AdamConfig::new(config.learning_rate, config.lr_decay),
        model.store(),
    )?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut labels = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.x.gather_rows(idx);
            labels.clear();
            labels.extend(idx.iter().map(|&i| data.y[i]));
            let noise = model.gates().sample_noise(&mut noise_rng, idx.len());

            let mut g = Graph::new();
            let out = model.forward_train(&mut g, &x, &noise)?;
            let terms = total_loss(&mut g, &out, &labels, &config.weights, p)?;
            let loss = g.value(terms.total).item();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            g.backward(terms.total, model.store_mut())?;
            adam.step(model.store_mut())?;
            sum += loss;
            batches += 1;
        }
        adam.end_epoch();
        loss_history.push(sum / batches as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_history,
    })
}

/// Selection scores against a known group structure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthScores {
    pub tpr: f64,
    pub fdr: f64,
    pub g_sim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub groups: GroupStructure,
    pub scores: Option<TruthScores>,
}

impl Evaluation {
    pub fn new(
        predicted: &[usize],
        labels: &[usize],
        groups: GroupStructure,
        truth: Option<&GroupStructure>,
    ) -> Result<Self> {
        let accuracy = metrics::accuracy(predicted, labels)?;
        let scores = match truth {
            Some(t) => {
                let rates = metrics::tpr_fdr(t, &groups)?;
                Some(TruthScores {
                    tpr: rates.tpr,
                    fdr: rates.fdr,
                    g_sim: metrics::g_sim(t, &groups)?,
                })
            }
            None => None,
        };
        Ok(Self {
            accuracy,
            groups,
            scores,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

/// Accuracy of the hard-gated ensemble on `test`, plus selection scores
/// when `truth` is given.
pub fn evaluate(
    model: &CompFsModel,
    test: &LabeledDataset,
    truth: Option<&GroupStructure>,
) -> Result<Evaluation> {
    let predicted = model.predict(&test.x)?;
    Evaluation::new(&predicted, &test.y, model.discovered_groups(), truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn toy(n: usize, seed: u64) -> LabeledDataset {
        // Label is the sign of feature 2; the other features are noise.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            y.push(usize::from(row[2] > 0.0));
            data.extend(row);
        }
        LabeledDataset::new("toy", Tensor::new(vec![n, 6], data).unwrap(), y, 2, None).unwrap()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                n_features: 6,
                n_learners: 2,
                hidden: 8,
                n_classes: 2,
                temperature: 0.1,
                threshold: 0.7,
            },
            weights: LossWeights {
                beta: 0.5,
                beta_e: 1.0,
                beta_r: 0.5,
                scale_by_sqrt_p: true,
            },
            epochs,
            batch_size: 32,
            learning_rate: 0.01,
            lr_decay: 0.99,
            seed: 11,
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let data = toy(100, 3);
        let cfg = config(0);
        let out = train(&cfg, &data).unwrap();
        assert!(out.loss_history.is_empty());
        let init = init_model(&cfg, &data).unwrap();
        assert_eq!(out.model.store(), init.store());
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let data = toy(100, 3);
        let cfg = config(3);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.model.store(), b.model.store());
        assert_eq!(a.loss_history, b.loss_history);
        let c = train(&TrainConfig { seed: 12, ..cfg }, &data).unwrap();
        assert_ne!(a.model.store(), c.model.store());
    }

    #[test]
    fn partial_batches_are_kept() {
        // 33 samples with batch 32: the second batch holds a single sample.
        let data = toy(33, 3);
        let cfg = config(1);
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.loss_history.len(), 1);
        assert!(out.loss_history[0].is_finite());
    }

    #[test]
    fn learns_and_selects_the_informative_feature() {
        let data = toy(600, 3);
        let test = toy(200, 4);
        let out = train(&config(40), &data).unwrap();
        let first = out.loss_history[0];
        let last = *out.loss_history.last().unwrap();
        assert!(last < first, "{first} -> {last}");
        let truth = GroupStructure::new([[2]]);
        let eval = evaluate(&out.model, &test, Some(&truth)).unwrap();
        assert!(eval.accuracy > 0.9, "{eval:?}");
        assert!(eval.groups.union().contains(&2), "{eval:?}");
    }

    #[test]
    fn non_finite_loss_reports_coordinates() {
        let mut data = toy(40, 3);
        let model = init_model(&config(1), &data).unwrap();
        data.x.data_mut()[0] = f64::NAN;
        let err = train_model(model, &config(1), &data).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_mismatched_width() {
        let data = toy(40, 3);
        let mut cfg = config(1);
        cfg.model.n_features = 7;
        assert!(train(&cfg, &data).is_err());
    }

    #[test]
    fn evaluation_conventions() {
        let truth = GroupStructure::new([vec![0, 1], vec![2]]);
        let e = Evaluation::new(&[1, 0], &[1, 0], truth.clone(), Some(&truth)).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.scores, Some(TruthScores { tpr: 1.0, fdr: 0.0, g_sim: 1.0 }));
        let none = Evaluation::new(&[1, 1], &[1, 0], GroupStructure::empty(), Some(&truth)).unwrap();
        assert_eq!(none.scores, Some(TruthScores { tpr: 0.0, fdr: 0.0, g_sim: 0.0 }));
        assert_eq!(none.n_groups(), 0);
    }
}
