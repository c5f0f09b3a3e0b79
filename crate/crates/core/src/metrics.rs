//! Feature-selection quality metrics: TPR/FDR over selected-feature unions,
//! Jaccard and grouped Jaccard similarity (`g_sim`), accuracy and AUROC.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type FeatureSet = BTreeSet<usize>;

/// A set of non-empty, pairwise-distinct feature-index sets.
///
/// Construction normalises its input: empty members are dropped, duplicates
/// are merged and the groups are kept in sorted order, so two structures
/// compare equal exactly when they contain the same groups.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<FeatureSet>", into = "Vec<FeatureSet>")]
pub struct GroupStructure {
    groups: Vec<FeatureSet>,
}

impl GroupStructure {
    pub fn new<I, G>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = usize>,
    {
        let set: BTreeSet<FeatureSet> = groups
            .into_iter()
            .map(|g| g.into_iter().collect::<FeatureSet>())
            .filter(|g| !g.is_empty())
            .collect();
        Self {
            groups: set.into_iter().collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a structure from 1-based feature indices.
    pub fn from_one_based<I, G>(groups: I) -> Result<Self>
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = usize>,
    {
        let mut out = Vec::new();
        for g in groups {
            let mut set = FeatureSet::new();
            for i in g {
                if i == 0 {
                    return Err(Error::invalid("feature indices are 1-based; got 0"));
                }
                set.insert(i - 1);
            }
            out.push(set);
        }
        Ok(Self::new(out))
    }

    pub fn groups(&self) -> &[FeatureSet] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn union(&self) -> FeatureSet {
        self.groups.iter().flatten().copied().collect()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.groups.iter().filter_map(|g| g.last()).max().copied()
    }

    /// Groups as sorted 1-based index lists.
    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|i| i + 1).collect())
            .collect()
    }
}

impl From<Vec<FeatureSet>> for GroupStructure {
    fn from(groups: Vec<FeatureSet>) -> Self {
        Self::new(groups)
    }
}

impl From<GroupStructure> for Vec<FeatureSet> {
    fn from(gs: GroupStructure) -> Self {
        gs.groups
    }
}

/// Renders 1-based, e.g. `{1,2} {3}`; an empty structure renders as `-`.
impl fmt::Display for GroupStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.groups.is_empty() {
            return f.write_str("-");
        }
        for (n, g) in self.groups.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            f.write_str("{")?;
            for (k, i) in g.iter().enumerate() {
                if k > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", i + 1)?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, with the empty-vs-empty case defined as 0.
pub fn jaccard(a: &FeatureSet, b: &FeatureSet) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Grouped Jaccard similarity: each truth group is matched to its most
/// similar candidate, and the summed best matches are normalised by the
/// larger of the two group counts.
pub fn g_sim(truth: &GroupStructure, candidate: &GroupStructure) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("g_sim: truth structure has no groups"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = truth
        .groups()
        .iter()
        .map(|t| {
            candidate
                .groups()
                .iter()
                .map(|c| jaccard(t, c))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / truth.len().max(candidate.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionRates {
    pub tpr: f64,
    pub fdr: f64,
}

/// True-positive and false-discovery rates over the flattened unions of the
/// two structures. FDR is 0 when nothing is selected.
pub fn tpr_fdr(truth: &GroupStructure, candidate: &GroupStructure) -> Result<SelectionRates> {
    if truth.is_empty() {
        return Err(Error::invalid("tpr_fdr: truth structure has no groups"));
    }
    let t = truth.union();
    let s = candidate.union();
    let hits = s.intersection(&t).count();
    let tpr = hits as f64 / t.len() as f64;
    let fdr = if s.is_empty() {
        0.0
    } else {
        (s.len() - hits) as f64 / s.len() as f64
    };
    Ok(SelectionRates { tpr, fdr })
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid(format!(
            "accuracy: {} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Binary AUROC via the Mann-Whitney statistic with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "auroc: {} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("auroc: label {bad} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { op: "auroc" });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auroc: both classes must be present"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks are 1-based; a tie block [start, end) shares the mean rank.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_block = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += midrank * pos_in_block as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gs(groups: &[&[usize]]) -> GroupStructure {
        GroupStructure::new(groups.iter().map(|g| g.iter().copied()))
    }

    fn set(items: &[usize]) -> FeatureSet {
        items.iter().copied().collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[3, 4])), 0.0);
        assert_eq!(jaccard(&set(&[3, 4, 5]), &set(&[1, 3, 5])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn structure_normalises_input() {
        let a = gs(&[&[2, 1], &[], &[1, 2], &[3]]);
        assert_eq!(a, gs(&[&[3], &[1, 2]]));
        assert_eq!(a.len(), 2);
        assert_eq!(a.to_string(), "{2,3} {4}");
        assert_eq!(GroupStructure::empty().to_string(), "-");
    }

    #[test]
    fn one_based_conversion() {
        let a = GroupStructure::from_one_based(vec![vec![40], vec![1]]).unwrap();
        assert_eq!(a, gs(&[&[39], &[0]]));
        assert_eq!(a.to_one_based(), vec![vec![1], vec![40]]);
        assert!(GroupStructure::from_one_based(vec![vec![0]]).is_err());
    }

    #[test]
    fn g_sim_edge_cases() {
        let truth = gs(&[&[1, 2], &[3, 4]]);
        assert_eq!(g_sim(&truth, &truth).unwrap(), 1.0);
        assert_eq!(g_sim(&truth, &GroupStructure::empty()).unwrap(), 0.0);
        assert!(g_sim(&GroupStructure::empty(), &truth).is_err());
    }

    #[test]
    fn tpr_fdr_examples() {
        let truth = gs(&[&[1, 2], &[3, 4]]);
        let r = tpr_fdr(&truth, &truth).unwrap();
        assert_eq!((r.tpr, r.fdr), (1.0, 0.0));

        let r = tpr_fdr(&truth, &GroupStructure::empty()).unwrap();
        assert_eq!((r.tpr, r.fdr), (0.0, 0.0));

        let r = tpr_fdr(&gs(&[&[1, 2, 3, 4]]), &gs(&[&[1, 2, 5]])).unwrap();
        assert_eq!(r.tpr, 0.5);
        assert!((r.fdr - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }
}
