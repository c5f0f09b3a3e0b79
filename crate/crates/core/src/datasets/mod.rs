//! Benchmark data: Gaussian synthetic tasks, binary functional-group tasks
//! labelled by binding logics, and a loader for external binary CSV files.

mod chem;
mod files;
mod syn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::GroupStructure;

pub use chem::{gen_chem, BindingLogic, CHEM_FEATURES, NOISE_BIT_RATE};
pub use files::{load_binary_csv, read_groups_file, write_groups_file};
pub use syn::{gen_syn, syn_label, SYN4_CORRELATION};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    /// `n x p` feature matrix.
    pub x: Tensor,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub truth: Option<GroupStructure>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        x: Tensor,
        y: Vec<usize>,
        n_classes: usize,
        truth: Option<GroupStructure>,
    ) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(Error::Shape {
                op: "dataset",
                left: x.shape().to_vec(),
                right: vec![y.len()],
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {n_classes})")));
        }
        if let Some(t) = &truth {
            if t.max_index().is_some_and(|m| m >= x.row_len()) {
                return Err(Error::invalid(format!(
                    "truth structure {t} references a feature beyond p = {}",
                    x.row_len()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            n_classes,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.row_len()
    }

    pub fn positive_rate(&self) -> f64 {
        self.y.iter().filter(|&&c| c == 1).count() as f64 / self.len().max(1) as f64
    }

    pub fn with_truth(mut self, truth: GroupStructure) -> Result<Self> {
        if truth.max_index().is_some_and(|m| m >= self.n_features()) {
            return Err(Error::invalid(format!(
                "truth structure {truth} references a feature beyond p = {}",
                self.n_features()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Syn1,
    Syn2,
    Syn3,
    Syn4,
    Chem1,
    Chem2,
    Chem3,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Syn1,
        Task::Syn2,
        Task::Syn3,
        Task::Syn4,
        Task::Chem1,
        Task::Chem2,
        Task::Chem3,
    ];

    pub fn is_synthetic(self) -> bool {
        matches!(self, Task::Syn1 | Task::Syn2 | Task::Syn3 | Task::Syn4)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Syn1 => "syn1",
            Task::Syn2 => "syn2",
            Task::Syn3 => "syn3",
            Task::Syn4 => "syn4",
            Task::Chem1 => "chem1",
            Task::Chem2 => "chem2",
            Task::Chem3 => "chem3",
        }
    }

    /// Ground-truth groups, 0-based.
    pub fn truth(self) -> GroupStructure {
        let groups: &[&[usize]] = match self {
            Task::Syn1 => &[&[0], &[1]],
            Task::Syn2 => &[&[0, 1], &[2, 3]],
            Task::Syn3 => &[&[0, 1], &[0, 2]],
            Task::Syn4 => &[&[0, 3], &[6, 9]],
            Task::Chem1 => &[&[39], &[0]],
            Task::Chem2 => &[&[55, 17], &[39]],
            Task::Chem3 => &[&[17, 28], &[0, 39]],
        };
        GroupStructure::new(groups.iter().map(|g| g.iter().copied()))
    }

    /// Default (train, test) sizes.
    pub fn default_sizes(self) -> (usize, usize) {
        if self.is_synthetic() {
            (20_000, 200)
        } else {
            (8_000, 1_000)
        }
    }

    /// Generates `n` samples from stream `stream` of `seed`.
    pub fn generate(self, n: usize, seed: u64, stream: u64) -> Result<LabeledDataset> {
        if self.is_synthetic() {
            syn::gen_syn_stream(self, n, syn::DEFAULT_FEATURES, seed, stream)
        } else {
            chem::gen_chem_stream(self, n, seed, stream)
        }
    }

    /// Independent train and test sets drawn from streams 0 and 1 of `seed`.
    pub fn train_test(
        self,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Result<(LabeledDataset, LabeledDataset)> {
        Ok((self.generate(n_train, seed, 0)?, self.generate(n_test, seed, 1)?))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Task::ALL
            .into_iter()
            .find(|t| t.name() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert_eq!("SYN2".parse::<Task>().unwrap(), Task::Syn2);
        assert!("syn9".parse::<Task>().is_err());
    }

    #[test]
    fn truth_structures_are_zero_based_table_values() {
        assert_eq!(Task::Syn4.truth().to_one_based(), vec![vec![1, 4], vec![7, 10]]);
        assert_eq!(
            Task::Chem2.truth(),
            GroupStructure::from_one_based(vec![vec![56, 18], vec![40]]).unwrap()
        );
        assert_eq!(
            Task::Chem3.truth(),
            GroupStructure::from_one_based(vec![vec![18, 29], vec![1, 40]]).unwrap()
        );
    }

    #[test]
    fn dataset_validates_shapes() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(LabeledDataset::new("t", x.clone(), vec![0, 1], 2, None).is_err());
        assert!(LabeledDataset::new("t", x.clone(), vec![0, 1, 2], 2, None).is_err());
        let truth = GroupStructure::new(vec![vec![5]]);
        assert!(LabeledDataset::new("t", x, vec![0, 1, 1], 2, Some(truth)).is_err());
    }
}
