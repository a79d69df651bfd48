//! Randomized oracle checks of the revision operator, the abduction
//! inclusions and e-value validity.

use anyhow::Result;
use coco_core::evalues::soft_rank_evalue;
use coco_core::knowledge::{KnowledgeProgram, KnowledgeTable};
use coco_core::pipeline::calibration_scores;
use coco_core::revision::{oracle_largest_consistent_pair, revise};
use coco_core::synthio::{generate, ConceptNoise, PredictorSpec};
use coco_core::{ConceptSet, LabelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub instances: usize,
    pub failures: usize,
    pub detail: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checks: Vec<CheckResult>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

/// Returned by the CLI when any oracle check fails.
#[derive(Debug)]
pub struct VerifyFailed(pub usize);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

struct Instance {
    kt: KnowledgeTable,
    gamma: ConceptSet,
    upsilon: LabelSet,
}

fn random_row(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut row = vec![0.0; m];
    match rng.random_range(0..8) {
        0 => {}
        1 | 2 => {
            let t = rng.random_range(1..=m.min(3));
            let start = rng.random_range(0..m);
            for i in 0..t {
                row[(start + i) % m] = 1.0 / t as f64;
            }
        }
        _ => row[rng.random_range(0..m)] = 1.0,
    }
    row
}

fn random_instance(rng: &mut ChaCha8Rng, max_total: usize) -> Result<Instance> {
    let (sizes, total) = loop {
        let k = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=10)).collect();
        let total: usize = sizes.iter().product();
        if total <= max_total {
            break (sizes, total);
        }
    };
    let m = rng.random_range(1..=8);
    let rows = (0..total).map(|_| random_row(rng, m)).collect();
    let kt = KnowledgeTable::compile(&KnowledgeProgram::ExplicitTable { domain_sizes: sizes, rows })?;
    let density: f64 = rng.random_range(0.0..1.0);
    let gamma = ConceptSet::from_indices((0..total).filter(|_| rng.random_bool(density)).collect());
    let upsilon = LabelSet::from_labels(m, (0..m).filter(|_| rng.random_bool(0.5)));
    Ok(Instance { kt, gamma, upsilon })
}

fn check(name: &str, seed: u64, instances: usize, failures: usize, detail: String) -> CheckResult {
    CheckResult { name: name.into(), seed, instances, failures, detail }
}

fn structural_checks(seed: u64, instances: usize, max_total: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fixed, mut optimal, mut lemma1, mut lemma2) = (0, 0, 0, 0);
    for _ in 0..instances {
        let inst = random_instance(&mut rng, max_total)?;
        let (kt, space, cap) = (&inst.kt, inst.kt.concept_space(), inst.kt.cap());
        let once = revise(&inst.gamma, &inst.upsilon, kt)?;
        if revise(&once.0, &once.1, kt)? != once {
            fixed += 1;
        }
        let oracle = oracle_largest_consistent_pair(&inst.gamma, &inst.upsilon, kt)?;
        if once.0.materialize(space, cap)? != oracle.0.materialize(space, cap)? || once.1 != oracle.1 {
            optimal += 1;
        }
        let m = kt.num_labels();
        let b = LabelSet::from_labels(m, (0..m).filter(|_| rng.random_bool(0.5)));
        let lhs = kt.abduce(&inst.upsilon.intersection(&b))?;
        let (ra, rb) = (kt.abduce(&inst.upsilon)?, kt.abduce(&b)?);
        if !(lhs.is_subset(&ra, space, cap)? && lhs.is_subset(&rb, space, cap)?) {
            lemma1 += 1;
        }
        let feasible =
            ConceptSet::from_indices(inst.gamma.materialize(space, cap)?.into_iter().filter(|&i| !kt.deduced(i).is_empty()).collect());
        if !feasible.is_subset(&kt.abduce(&kt.deduce_image(&feasible)?)?, space, cap)? {
            lemma2 += 1;
        }
    }
    Ok(vec![
        check("fixed-point", seed, instances, fixed, "revise(revise(G, U)) == revise(G, U)".into()),
        check("optimality", seed, instances, optimal, "revise == greatest fixed-point oracle".into()),
        check("abduction-intersection", seed, instances, lemma1, "abduce(A & B) within abduce(A) & abduce(B)".into()),
        check("abduction-round-trip", seed, instances, lemma2, "G within abduce(deduce_image(G)) for feasible G".into()),
    ])
}

/// The converse of the intersection inclusion must fail on a two-way tie.
fn tie_counterexample() -> Result<CheckResult> {
    let kt = KnowledgeTable::compile(&KnowledgeProgram::ExplicitTable { domain_sizes: vec![1], rows: vec![vec![0.5, 0.5]] })?;
    let (a, b) = (LabelSet::from_labels(2, [0]), LabelSet::from_labels(2, [1]));
    let both = !kt.abduce(&a)?.is_empty() && !kt.abduce(&b)?.is_empty();
    let fails = both && kt.abduce(&a.intersection(&b))?.is_empty();
    Ok(check("abduction-intersection-converse", 0, 1, usize::from(!fails), "converse fails on a tie".into()))
}

/// Mean ground-truth e-values stay within three standard errors of 1.
/// Validity is marginal over the calibration draw, so the records are cut
/// into independent calibration/test blocks and the error is taken across
/// block means.
fn evalue_check(cfg: &RunConfig, kt: &KnowledgeTable, seed: u64) -> Result<CheckResult> {
    const BLOCKS: usize = 40;
    const N_CAL: usize = 250;
    const N_TEST: usize = 250;
    let spec = match &cfg.data.generate {
        Some(g) => g.predictor.clone(),
        None => PredictorSpec::uniform(kt.concept_space().k(), ConceptNoise::temperature(1.0).with_logit_noise(1.0)),
    };
    let (records, _) = generate(kt, &spec, BLOCKS * (N_CAL + N_TEST), 0, seed)?;
    let k = kt.concept_space().k();
    // block_means[b][0] is the label side, [1..] the concepts
    let mut block_means = Vec::with_capacity(BLOCKS);
    for block in records.chunks(N_CAL + N_TEST) {
        let cal = calibration_scores(&block[..N_CAL], kt)?;
        let test = calibration_scores(&block[N_CAL..], kt)?;
        let mean_e = |scores: &[f64], sum: f64| {
            scores.iter().map(|&s| soft_rank_evalue(s, sum, N_CAL)).sum::<f64>() / scores.len() as f64
        };
        let mut means = vec![mean_e(&test.label, cal.label.iter().sum())];
        for j in 0..k {
            means.push(mean_e(&test.concept_column(j), cal.concept_column(j).iter().sum()));
        }
        block_means.push(means);
    }
    let mut failures = 0;
    let mut detail = Vec::new();
    for side in 0..=k {
        let xs: Vec<f64> = block_means.iter().map(|m| m[side]).collect();
        let mean = xs.iter().sum::<f64>() / BLOCKS as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (BLOCKS - 1) as f64;
        let se = (var / BLOCKS as f64).sqrt();
        if mean > 1.0 + 3.0 * se {
            failures += 1;
        }
        let name = if side == 0 { "label".to_string() } else { format!("concept {}", side - 1) };
        detail.push(format!("{name}: {mean:.4} (se {se:.4})"));
    }
    Ok(check("evalue-validity", seed, BLOCKS, failures, detail.join("; ")))
}

pub fn run_verify(cfg: &RunConfig) -> Result<VerifySummary> {
    cfg.validate()?;
    let kt = cfg.knowledge_table()?;
    let mut checks = vec![tie_counterexample()?];
    for &seed in &cfg.seeds {
        checks.extend(structural_checks(seed, cfg.verify.instances, cfg.verify.max_total_size)?);
        if kt.concept_space().total_size() <= kt.cap() {
            checks.push(evalue_check(cfg, &kt, seed)?);
        }
    }
    Ok(VerifySummary { checks })
}
