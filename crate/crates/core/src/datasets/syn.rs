use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LabeledDataset, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub(crate) const DEFAULT_FEATURES: usize = 500;

/// Pairwise correlation inside each consecutive feature triple of Syn4.
pub const SYN4_CORRELATION: f64 = 0.9;

const SINGLE_THRESHOLD: f64 = 0.55;
const PRODUCT_THRESHOLD: f64 = 0.30;

/// Decision rule of a synthetic task applied to one (0-based) row.
pub fn syn_label(task: Task, x: &[f64]) -> Result<usize> {
    let positive = match task {
        Task::Syn1 => x[0] > SINGLE_THRESHOLD || x[1] > SINGLE_THRESHOLD,
        Task::Syn2 => x[0] * x[1] > PRODUCT_THRESHOLD || x[2] * x[3] > PRODUCT_THRESHOLD,
        Task::Syn3 => x[0] * x[1] > PRODUCT_THRESHOLD || x[0] * x[2] > PRODUCT_THRESHOLD,
        Task::Syn4 => x[0] * x[3] > PRODUCT_THRESHOLD || x[6] * x[9] > PRODUCT_THRESHOLD,
        other => return Err(Error::invalid(format!("{other} is not a synthetic task"))),
    };
    Ok(usize::from(positive))
}

/// `n` samples of a synthetic task over `p` features.
///
/// Syn1-3 draw `x ~ N(0, I)`. Syn4 correlates every consecutive triple
/// `{3k, 3k+1, 3k+2}` with pairwise correlation [`SYN4_CORRELATION`]; a
/// trailing partial block keeps the same correlation among its members.
pub fn gen_syn(task: Task, n: usize, p: usize, seed: u64) -> Result<LabeledDataset> {
    gen_syn_stream(task, n, p, seed, 0)
}

pub(crate) fn gen_syn_stream(
    task: Task,
    n: usize,
    p: usize,
    seed: u64,
    stream: u64,
) -> Result<LabeledDataset> {
    if !task.is_synthetic() {
        return Err(Error::invalid(format!("{task} is not a synthetic task")));
    }
    if n == 0 || p < 10 {
        return Err(Error::invalid(format!("synthetic tasks need n >= 1 and p >= 10 (got n={n}, p={p})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let factors = if task == Task::Syn4 {
        Some([1, 2, 3].map(|k| equicorrelated_cholesky(k, SYN4_CORRELATION)))
    } else {
        None
    };

    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut z = vec![0.0; p];
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        let start = data.len();
        match &factors {
            None => data.extend_from_slice(&z),
            Some(chol) => {
                for block in z.chunks(3) {
                    let l = &chol[block.len() - 1];
                    let k = block.len();
                    for i in 0..k {
                        let v: f64 = (0..=i).map(|j| l[i * k + j] * block[j]).sum();
                        data.push(v);
                    }
                }
            }
        }
        y.push(syn_label(task, &data[start..start + p])?);
    }
    let x = Tensor::new(vec![n, p], data)?;
    LabeledDataset::new(task.name(), x, y, 2, Some(task.truth()))
}

/// Lower Cholesky factor (row-major `k x k`) of the matrix with unit
/// diagonal and constant off-diagonal `rho`.
fn equicorrelated_cholesky(k: usize, rho: f64) -> Vec<f64> {
    let a = |i: usize, j: usize| if i == j { 1.0 } else { rho };
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i * k + m] * l[j * k + m]).sum();
            if i == j {
                l[i * k + j] = (a(i, i) - s).sqrt();
            } else {
                l[i * k + j] = (a(i, j) - s) / l[j * k + j];
            }
        }
    }
    l
}
