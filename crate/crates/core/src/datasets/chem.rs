use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledDataset, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Functional-group vocabulary size.
pub const CHEM_FEATURES: usize = 84;

/// Presence rate of functional groups that do not enter the logic.
pub const NOISE_BIT_RATE: f64 = 0.1;

// 0-based feature indices of the fragments used by the logics.
const ALKYNE: usize = 0;
const BENZENE: usize = 17;
const CARBONYL: usize = 28;
const ETHER: usize = 39;
const PRIMARY_AMINE: usize = 55;

/// Boolean expression over functional-group presence bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BindingLogic {
    Present(usize),
    Not(Box<BindingLogic>),
    And(Vec<BindingLogic>),
    Or(Vec<BindingLogic>),
}

impl BindingLogic {
    pub fn absent(feature: usize) -> Self {
        BindingLogic::Not(Box::new(BindingLogic::Present(feature)))
    }

    /// Bits above 0.5 count as present.
    pub fn eval(&self, x: &[f64]) -> bool {
        match self {
            BindingLogic::Present(k) => x[*k] > 0.5,
            BindingLogic::Not(e) => !e.eval(x),
            BindingLogic::And(es) => es.iter().all(|e| e.eval(x)),
            BindingLogic::Or(es) => es.iter().any(|e| e.eval(x)),
        }
    }

    /// Distinct referenced features in ascending order.
    pub fn literals(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect(&self, out: &mut Vec<usize>) {
        match self {
            BindingLogic::Present(k) => out.push(*k),
            BindingLogic::Not(e) => e.collect(out),
            BindingLogic::And(es) | BindingLogic::Or(es) => es.iter().for_each(|e| e.collect(out)),
        }
    }

    pub fn for_task(task: Task) -> Result<Self> {
        use BindingLogic::{And, Or, Present};
        Ok(match task {
            // Ether OR NOT Alkyne
            Task::Chem1 => Or(vec![Present(ETHER), Self::absent(ALKYNE)]),
            // (Primary amine OR NOT Benzene) AND NOT Ether
            Task::Chem2 => And(vec![
                Or(vec![Present(PRIMARY_AMINE), Self::absent(BENZENE)]),
                Self::absent(ETHER),
            ]),
            // (Benzene AND NOT Carbonyl) OR (Alkyne AND NOT Ether)
            Task::Chem3 => Or(vec![
                And(vec![Present(BENZENE), Self::absent(CARBONYL)]),
                And(vec![Present(ALKYNE), Self::absent(ETHER)]),
            ]),
            other => return Err(Error::invalid(format!("{other} has no binding logic"))),
        })
    }
}

/// `n` binary samples labelled by the task's binding logic.
///
/// The logic's literal bits cycle through every binary combination so each
/// combination appears `n / 2^k` times (up to one), rows are shuffled, and
/// every other bit is Bernoulli([`NOISE_BIT_RATE`]). Class rates follow from
/// the logic and are not balanced.
pub fn gen_chem(task: Task, n: usize, seed: u64) -> Result<LabeledDataset> {
    gen_chem_stream(task, n, seed, 0)
}

pub(crate) fn gen_chem_stream(task: Task, n: usize, seed: u64, stream: u64) -> Result<LabeledDataset> {
    let logic = BindingLogic::for_task(task)?;
    if n < 16 {
        return Err(Error::invalid(format!("chemistry tasks need n >= 16 (got {n})")));
    }
    let literals = logic.literals();
    let combos = 1usize << literals.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut order: Vec<usize> = (0..n).map(|i| i % combos).collect();
    order.shuffle(&mut rng);

    let p = CHEM_FEATURES;
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for combo in order {
        for v in row.iter_mut() {
            *v = if rng.gen_bool(NOISE_BIT_RATE) { 1.0 } else { 0.0 };
        }
        set_literals(&mut row, &literals, combo);
        y.push(usize::from(logic.eval(&row)));
        data.extend_from_slice(&row);
    }
    let x = Tensor::new(vec![n, p], data)?;
    LabeledDataset::new(task.name(), x, y, 2, Some(task.truth()))
}

fn set_literals(row: &mut [f64], literals: &[usize], combo: usize) {
    for (bit, &k) in literals.iter().enumerate() {
        row[k] = if combo >> bit & 1 == 1 { 1.0 } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(set: &[usize]) -> Vec<f64> {
        let mut row = vec![0.0; CHEM_FEATURES];
        for &k in set {
            row[k] = 1.0;
        }
        row
    }

    #[test]
    fn chem1_logic_examples() {
        let logic = BindingLogic::for_task(Task::Chem1).unwrap();
        // 1-based features 40 (ether) and 1 (alkyne).
        assert!(logic.eval(&bits(&[39, 0])));
        assert!(!logic.eval(&bits(&[0])));
        assert!(logic.eval(&bits(&[])));
    }

    #[test]
    fn literals_match_truth_features() {
        for task in [Task::Chem1, Task::Chem2, Task::Chem3] {
            let logic = BindingLogic::for_task(task).unwrap();
            let truth: Vec<usize> = task.truth().union().into_iter().collect();
            assert_eq!(logic.literals(), truth, "{task}");
        }
        assert!(BindingLogic::for_task(Task::Syn1).is_err());
    }

    #[test]
    fn combinations_are_balanced_and_noise_cannot_change_labels() {
        let task = Task::Chem3;
        let logic = BindingLogic::for_task(task).unwrap();
        let lits = logic.literals();
        let n = 1600;
        let d = gen_chem(task, n, 5).unwrap();
        let mut counts = vec![0usize; 1 << lits.len()];
        for r in 0..d.len() {
            let row = d.x.row(r);
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
            let combo = lits
                .iter()
                .enumerate()
                .fold(0, |acc, (b, &k)| acc | (usize::from(row[k] > 0.5) << b));
            counts[combo] += 1;
            assert_eq!(usize::from(logic.eval(row)), d.y[r]);

            // Clearing every noise bit leaves the label unchanged.
            let mut clean = vec![0.0; CHEM_FEATURES];
            for &k in &lits {
                clean[k] = row[k];
            }
            assert_eq!(usize::from(logic.eval(&clean)), d.y[r]);
        }
        assert!(counts.iter().all(|&c| c == n / counts.len()));
    }

    #[test]
    fn all_false_literals_follow_the_logic() {
        for task in [Task::Chem1, Task::Chem2, Task::Chem3] {
            let logic = BindingLogic::for_task(task).unwrap();
            let d = gen_chem(task, 64, 9).unwrap();
            let expected = usize::from(logic.eval(&bits(&[])));
            for r in 0..d.len() {
                if logic.literals().iter().all(|&k| d.x.row(r)[k] == 0.0) {
                    assert_eq!(d.y[r], expected);
                }
            }
        }
    }

    #[test]
    fn rejects_too_few_samples() {
        assert!(gen_chem(Task::Chem1, 15, 0).is_err());
    }
}
