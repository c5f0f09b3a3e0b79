//! Oracles shared by the integration tests.
#![allow(dead_code)]

use compfs::autodiff::{Graph, Tensor};
use compfs::gates::gate_noise_factors;
use compfs::metrics::GroupStructure;
use compfs::objective::{total_loss, LossWeights};
use compfs::{CompFsModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn one_based(groups: &[&[usize]]) -> GroupStructure {
    GroupStructure::from_one_based(groups.iter().map(|g| g.iter().copied())).unwrap()
}

type Row = (&'static [&'static [usize]], &'static [&'static [usize]], f64);

const A: &[&[usize]] = &[&[1, 2], &[3, 4]];
const B: &[&[usize]] = &[&[1], &[2], &[3, 4, 5]];
const C: &[&[usize]] = &[&[1, 2], &[1, 3]];

/// Worked examples of group similarity, 1-based:
/// (truth, candidate, value).
pub const GROUP_SIMILARITY_ROWS: [Row; 11] = [
    (A, &[&[1, 2], &[3, 4]], 1.0),
    (A, &[&[1, 2, 3, 4]], 0.5),
    (A, &[&[1, 2, 3], &[1, 4]], 0.5),
    (A, &[&[1], &[2], &[3], &[4]], 0.25),
    (A, &[&[1, 2], &[3, 4], &[1, 3], &[1, 4], &[2, 3], &[2, 4]], 1.0 / 3.0),
    (B, &[&[1, 2]], 1.0 / 3.0),
    (B, &[&[3], &[1, 3, 5]], 5.0 / 18.0),
    (B, &[&[6], &[7], &[8, 9, 10]], 0.0),
    (C, &[&[1, 2], &[1, 3]], 1.0),
    (C, &[&[1, 2, 3]], 2.0 / 3.0),
    (C, &[&[1], &[2], &[3]], 1.0 / 3.0),
];

pub const P: usize = 6;
const BATCH: usize = 5;

pub fn config(n_learners: usize) -> ModelConfig {
    ModelConfig {
        n_features: P,
        n_learners,
        hidden: 4,
        n_classes: 3,
        temperature: 0.1,
        threshold: 0.7,
    }
}

pub fn weights() -> LossWeights {
    LossWeights {
        beta: 4.5,
        beta_e: 1.0,
        beta_r: 1.2,
        scale_by_sqrt_p: true,
    }
}

pub struct Case {
    pub model: CompFsModel,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub noise: Vec<Tensor>,
}

pub fn case(seed: u64, n_learners: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..P).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let model = CompFsModel::new(config(n_learners), means, &mut rng).unwrap();
    let x = Tensor::new(vec![BATCH, P], (0..BATCH * P).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let labels = (0..BATCH).map(|_| rng.gen_range(0..3)).collect();
    // Milder noise than a raw draw keeps the gates off their flat tails.
    let noise = (0..n_learners)
        .map(|_| Tensor::new(vec![BATCH, P], gate_noise_factors(&mut rng, BATCH * P, 1.0)).unwrap())
        .collect();
    Case { model, x, labels, noise }
}

pub fn loss(c: &Case, model: &CompFsModel, w: &LossWeights) -> f64 {
    let mut g = Graph::new();
    let out = model.forward_train(&mut g, &c.x, &c.noise).unwrap();
    let terms = total_loss(&mut g, &out, &c.labels, w, P).unwrap();
    g.value(terms.total).item()
}

/// Worst relative error between the reverse-mode gradient of the full
/// objective and central differences, over every trainable scalar.
pub fn worst_gradient_error(seed: u64) -> f64 {
    let w = weights();
    let c = case(seed, 3);
    let mut model = c.model.clone();
    model.store_mut().zero_grad();
    let mut g = Graph::new();
    let out = model.forward_train(&mut g, &c.x, &c.noise).unwrap();
    let terms = total_loss(&mut g, &out, &c.labels, &w, P).unwrap();
    g.backward(terms.total, model.store_mut()).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model.store().ids().filter(|&id| model.store().is_trainable(id)).collect();
    for id in ids {
        for k in 0..model.store().value(id).len() {
            let orig = model.store().value(id).data()[k];
            model.store_mut().value_mut(id).data_mut()[k] = orig + h;
            let up = loss(&c, &model, &w);
            model.store_mut().value_mut(id).data_mut()[k] = orig - h;
            let down = loss(&c, &model, &w);
            model.store_mut().value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = model.store().grad(id).data()[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}
