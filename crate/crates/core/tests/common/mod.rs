#![allow(dead_code)]

use coco_core::knowledge::{KnowledgeProgram, KnowledgeTable};
use coco_core::{ConceptSet, LabelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub kt: KnowledgeTable,
    pub rows: Vec<Vec<f64>>,
    pub gamma: ConceptSet,
    pub upsilon: LabelSet,
}

/// Random explicit table with infeasible rows, ties and non-uniform rows.
pub fn random_table(rng: &mut ChaCha8Rng, max_total: usize) -> (KnowledgeTable, Vec<Vec<f64>>) {
    loop {
        let k = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=5)).collect();
        let total: usize = sizes.iter().product();
        if total > max_total {
            continue;
        }
        let m = rng.random_range(1..=6);
        let rows = (0..total).map(|_| random_row(rng, m)).collect();
        let program = KnowledgeProgram::ExplicitTable { domain_sizes: sizes, rows };
        let kt = KnowledgeTable::compile(&program).unwrap();
        let KnowledgeProgram::ExplicitTable { rows, .. } = program else { unreachable!() };
        return (kt, rows);
    }
}

fn random_row(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut row = vec![0.0; m];
    match rng.random_range(0..10) {
        0 | 1 => {}
        2..=4 => {
            let t = rng.random_range(1..=m.min(3));
            let mut labels: Vec<usize> = (0..m).collect();
            for i in 0..t {
                let j = rng.random_range(i..m);
                labels.swap(i, j);
            }
            for &y in &labels[..t] {
                row[y] = 1.0 / t as f64;
            }
        }
        5 | 6 => {
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(1..4) as f64).collect();
            let s: f64 = w.iter().sum();
            row.iter_mut().zip(&w).for_each(|(r, x)| *r = x / s);
        }
        _ => row[rng.random_range(0..m)] = 1.0,
    }
    row
}

pub fn random_instance(seed: u64, max_total: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kt, rows) = random_table(&mut rng, max_total);
    let total = kt.concept_space().total_size();
    let m = kt.num_labels();
    let density = rng.random_range(0.0..1.0);
    let gamma = if rng.random_bool(0.3) {
        let factors = kt
            .concept_space()
            .domain_sizes()
            .iter()
            .map(|&d| (0..d).filter(|_| rng.random_bool(density)).collect())
            .collect();
        ConceptSet::product(factors)
    } else {
        ConceptSet::from_indices((0..total).filter(|_| rng.random_bool(density)).collect())
    };
    let upsilon = LabelSet::from_labels(m, (0..m).filter(|_| rng.random_bool(0.5)));
    Instance { kt, rows, gamma, upsilon }
}

/// Argmax set of a raw row, recomputed independently of the library.
pub fn argmax(row: &[f64]) -> Vec<usize> {
    let max = row.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![];
    }
    (0..row.len()).filter(|&y| (row[y] - max).abs() < 1e-12).collect()
}

pub fn members(set: &ConceptSet, kt: &KnowledgeTable) -> Vec<usize> {
    set.materialize(kt.concept_space(), kt.cap()).unwrap()
}
