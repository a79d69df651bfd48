mod common;

use std::collections::BTreeSet;

use coco_core::knowledge::{KnowledgeProgram, KnowledgeTable};
use coco_core::revision::{is_mutually_consistent, oracle_largest_consistent_pair, revise, revise_via_abduction};
use coco_core::{ConceptSet, LabelSet};
use common::{argmax, members, random_instance};
use proptest::prelude::*;

fn brute_revise(inst: &common::Instance) -> (Vec<usize>, Vec<usize>) {
    let g = members(&inst.gamma, &inst.kt);
    let u: Vec<usize> = inst.upsilon.to_vec();
    let kept: Vec<usize> =
        g.iter().copied().filter(|&c| argmax(&inst.rows[c]).iter().any(|y| u.contains(y))).collect();
    let image: BTreeSet<usize> = g.iter().flat_map(|&c| argmax(&inst.rows[c])).collect();
    (kept, u.into_iter().filter(|y| image.contains(y)).collect())
}

#[test]
fn revision_matches_definition_on_1000_instances() {
    for seed in 0..1000 {
        let inst = random_instance(seed, 200);
        let (c, y) = revise(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        let (bc, by) = brute_revise(&inst);
        assert_eq!(members(&c, &inst.kt), bc, "seed {seed}");
        assert_eq!(y.to_vec(), by, "seed {seed}");
        assert_eq!((c.clone(), y.clone()), revise_via_abduction(&inst.gamma, &inst.upsilon, &inst.kt).unwrap());
        assert!(is_mutually_consistent(&c, &y, &inst.kt).unwrap());
    }
}

#[test]
fn revision_is_a_one_step_fixed_point() {
    for seed in 0..1000 {
        let inst = random_instance(10_000 + seed, 200);
        let once = revise(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        let twice = revise(&once.0, &once.1, &inst.kt).unwrap();
        assert_eq!(once, twice, "seed {seed}");
    }
}

#[test]
fn revision_equals_greatest_fixed_point_oracle() {
    for seed in 0..1000 {
        let inst = random_instance(20_000 + seed, 1024);
        let got = revise(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        let oracle = oracle_largest_consistent_pair(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        assert_eq!(members(&got.0, &inst.kt), members(&oracle.0, &inst.kt), "seed {seed}");
        assert_eq!(got.1, oracle.1, "seed {seed}");
    }
}

/// Every mutually consistent sub-pair, by powerset scan.
fn consistent_subpairs(g: &[usize], u: &[usize], rows: &[Vec<f64>]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    for gm in 0u32..1 << g.len() {
        let gs: Vec<usize> = (0..g.len()).filter(|i| gm >> i & 1 == 1).map(|i| g[i]).collect();
        for um in 0u32..1 << u.len() {
            let us: Vec<usize> = (0..u.len()).filter(|i| um >> i & 1 == 1).map(|i| u[i]).collect();
            let concepts_ok = gs.iter().all(|&c| argmax(&rows[c]).iter().any(|y| us.contains(y)));
            let labels_ok = us.iter().all(|y| gs.iter().any(|&c| argmax(&rows[c]).contains(y)));
            if concepts_ok && labels_ok {
                out.push((gs.clone(), us));
            }
        }
    }
    out
}

#[test]
fn revision_contains_every_consistent_subpair() {
    let mut checked = 0;
    for seed in 0..4000 {
        let inst = random_instance(30_000 + seed, 64);
        let g = members(&inst.gamma, &inst.kt);
        let u = inst.upsilon.to_vec();
        if g.len() + u.len() > 12 {
            continue;
        }
        checked += 1;
        let (c, y) = revise(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        let (c, y) = (members(&c, &inst.kt), y.to_vec());
        let pairs = consistent_subpairs(&g, &u, &inst.rows);
        assert!(pairs.contains(&(c.clone(), y.clone())), "seed {seed}: revision output not consistent");
        for (gs, us) in pairs {
            assert!(gs.iter().all(|x| c.contains(x)) && us.iter().all(|x| y.contains(x)), "seed {seed}");
        }
    }
    assert!(checked > 500, "only {checked} small instances");
}

#[test]
fn revision_only_shrinks() {
    for seed in 0..500 {
        let inst = random_instance(40_000 + seed, 300);
        let (c, y) = revise(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        assert!(c.len() <= inst.gamma.len());
        assert!(y.is_subset(&inst.upsilon));
        assert!(c.is_subset(&inst.gamma, inst.kt.concept_space(), inst.kt.cap()).unwrap());
    }
}

#[test]
fn documented_cases() {
    let kt = KnowledgeTable::compile(&KnowledgeProgram::DigitSum { k: 2, base: 10 }).unwrap();
    let labels = LabelSet::from_labels(19, [5, 9]);
    let (c, y) = revise(&ConceptSet::from_indices(vec![23, 44]), &labels, &kt).unwrap();
    assert_eq!(c, ConceptSet::Explicit(vec![23]));
    assert_eq!(y.to_vec(), vec![5]);

    let (c, y) = revise(&ConceptSet::full(kt.concept_space()), &LabelSet::empty(19), &kt).unwrap();
    assert!(c.is_empty() && y.is_empty());

    // disjoint: no member of Γ deduces into Υ
    let (c, y) = oracle_largest_consistent_pair(&ConceptSet::from_indices(vec![0, 1]), &LabelSet::from_labels(19, [10]), &kt).unwrap();
    assert!(c.is_empty() && y.is_empty());

    let u = LabelSet::from_labels(19, [3, 17]);
    let ab = kt.abduce(&u).unwrap();
    let (c, y) = oracle_largest_consistent_pair(&ab, &u, &kt).unwrap();
    assert_eq!(members(&c, &kt), members(&ab, &kt));
    assert_eq!(y, u);
}

proptest! {
    #[test]
    fn fixed_point_and_consistency(seed in any::<u64>()) {
        let inst = random_instance(seed, 256);
        let once = revise(&inst.gamma, &inst.upsilon, &inst.kt).unwrap();
        prop_assert!(is_mutually_consistent(&once.0, &once.1, &inst.kt).unwrap());
        prop_assert_eq!(revise(&once.0, &once.1, &inst.kt).unwrap(), once);
    }
}
