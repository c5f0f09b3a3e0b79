mod common;

use std::collections::BTreeSet;

use common::{one_based, GROUP_SIMILARITY_ROWS};
use compfs::metrics::{auroc, g_sim, tpr_fdr, FeatureSet, GroupStructure};
use proptest::prelude::*;

#[test]
fn group_similarity_worked_examples() {
    for (truth, cand, want) in GROUP_SIMILARITY_ROWS {
        let got = g_sim(&one_based(truth), &one_based(cand)).unwrap();
        assert!((got - want).abs() < 1e-12, "{truth:?} vs {cand:?}: {got} != {want}");
    }
}

#[test]
fn selection_rate_examples() {
    let truth = one_based(&[&[1, 2], &[3, 4]]);
    let r = tpr_fdr(&truth, &one_based(&[&[1, 2, 5]])).unwrap();
    assert_eq!(r.tpr, 0.5);
    assert!((r.fdr - 1.0 / 3.0).abs() < 1e-12);
    let r = tpr_fdr(&truth, &GroupStructure::empty()).unwrap();
    assert_eq!((r.tpr, r.fdr), (0.0, 0.0));
    assert!(g_sim(&GroupStructure::empty(), &truth).is_err());
}

fn groups_strategy(max_feature: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0..max_feature, 1..6), 1..6)
}

// Splits `union` into random non-empty blocks using `cuts` as bucket labels.
fn repartition(union: &FeatureSet, cuts: &[usize]) -> GroupStructure {
    let mut blocks = vec![BTreeSet::new(); 4];
    for (k, &f) in union.iter().enumerate() {
        blocks[cuts[k % cuts.len()] % 4].insert(f);
    }
    GroupStructure::new(blocks)
}

fn brute_auroc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn g_sim_ignores_order_and_feature_names(
        truth in groups_strategy(12),
        cand in groups_strategy(12),
        perm in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let t = GroupStructure::new(truth.clone());
        let c = GroupStructure::new(cand.clone());
        let base = g_sim(&t, &c).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));

        let mut rt = truth.clone();
        rt.reverse();
        let mut rc: Vec<Vec<usize>> = cand.iter().map(|g| g.iter().rev().copied().collect()).collect();
        rc.rotate_left(1);
        prop_assert!((g_sim(&GroupStructure::new(rt), &GroupStructure::new(rc)).unwrap() - base).abs() < 1e-12);

        let rename = |gs: &Vec<Vec<usize>>| GroupStructure::new(gs.iter().map(|g| g.iter().map(|&f| perm[f]).collect::<Vec<_>>()));
        prop_assert!((g_sim(&rename(&truth), &rename(&cand)).unwrap() - base).abs() < 1e-12);

        prop_assert_eq!(g_sim(&t, &t).unwrap(), 1.0);
        let disjoint = t.union().is_disjoint(&c.union());
        prop_assert_eq!(base == 0.0, disjoint);
    }

    #[test]
    fn selection_rates_depend_only_on_unions(
        truth in groups_strategy(15),
        cand in groups_strategy(15),
        cuts_t in prop::collection::vec(0usize..4, 1..8),
        cuts_c in prop::collection::vec(0usize..4, 1..8),
    ) {
        let t = GroupStructure::new(truth);
        let c = GroupStructure::new(cand);
        let base = tpr_fdr(&t, &c).unwrap();
        let other = tpr_fdr(&repartition(&t.union(), &cuts_t), &repartition(&c.union(), &cuts_c)).unwrap();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn auroc_matches_pairwise_count(
        points in prop::collection::vec((0u8..20, 0usize..2), 2..200),
    ) {
        let scores: Vec<f64> = points.iter().map(|&(s, _)| f64::from(s) / 7.0).collect();
        let labels: Vec<usize> = points.iter().map(|&(_, l)| l).collect();
        let both = labels.contains(&0) && labels.contains(&1);
        prop_assume!(both);
        let fast = auroc(&scores, &labels).unwrap();
        prop_assert!((fast - brute_auroc(&scores, &labels)).abs() < 1e-12);
    }
}
