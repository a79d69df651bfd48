use coco_core::conformal::calibrate_quantile;
use coco_core::evalues::soft_rank_evalue;
use coco_core::knowledge::{KnowledgeProgram, KnowledgeTable};
use coco_core::metrics::{abduction_coverage_bounds, deduction_coverage_bounds, theoretical_bounds};
use coco_core::pipeline::{evaluate_predictions, predict, CalibrationState};
use coco_core::{Aggregation, ConceptNoise, Method, PredictorSpec, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn quantile_sets_cover_exchangeable_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, trials, alpha) = (99usize, 4000, 0.1);
    let mut hits = 0;
    for _ in 0..trials {
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let q = calibrate_quantile(&scores, alpha).unwrap();
        hits += (rng.random::<f64>() <= q) as usize;
    }
    let cov = hits as f64 / trials as f64;
    // exact value is ceil(100 * 0.9) / 100 = 0.9
    let se = (0.9f64 * 0.1 / trials as f64).sqrt();
    assert!((cov - 0.9).abs() < 4.0 * se, "{cov}");
}

#[test]
fn soft_rank_evalue_has_unit_mean_under_exchangeability() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, trials) = (50usize, 20_000);
    let mut vals = Vec::with_capacity(trials);
    for _ in 0..trials {
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        let test: f64 = rng.random::<f64>().powi(3);
        vals.push(soft_rank_evalue(test, scores.iter().sum(), n));
    }
    let mean = vals.iter().sum::<f64>() / trials as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    assert!(mean <= 1.0 + 3.0 * (var / trials as f64).sqrt(), "{mean}");
}

#[test]
fn bound_calculator_values() {
    let b = theoretical_bounds(0.1, 0.1, 1.0, 0.8, 0.0, 0.0);
    assert!((b.label - 0.62).abs() < 1e-12);
    let b = theoretical_bounds(0.1, 0.1, 1.0, 1.0, 0.0, 0.0);
    assert!((b.label - 0.8).abs() < 1e-12 && (b.concept - 0.8).abs() < 1e-12);
    let b = theoretical_bounds(0.1, 0.1, 1.0, 0.8, 0.0, 0.06);
    assert!((b.label - 0.68).abs() < 1e-12);
    let b = theoretical_bounds(0.6, 0.6, 0.1, 0.1, 0.0, 0.0);
    assert!(b.label_raw < 0.0 && b.label == 0.0);
}

#[test]
fn sound_regime_respects_bounds() {
    let kt = KnowledgeTable::compile(&KnowledgeProgram::DigitSum { k: 2, base: 10 }).unwrap();
    let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(1.0).with_logit_noise(1.0));
    let (alpha, beta) = (0.1, 0.1);
    for seed in 0..3 {
        let (cal, test) = coco_core::synthio::generate(&kt, &spec, 5000, 5000, seed).unwrap();
        let state = CalibrationState::fit(&cal, &kt, alpha, beta, Aggregation::Avg).unwrap();
        let preds = predict(&test, &state, &kt, Method::Coco, &Provenance::default(), true).unwrap();
        let r = evaluate_predictions(&preds, &test, &kt, alpha, beta).unwrap();
        let b = r.bounds.unwrap();
        assert_eq!(r.delta_ab, Some(1.0));
        assert_eq!(r.delta_de, Some(1.0));
        assert!(r.labels.coverage.unwrap() >= b.label - 0.02);
        assert!(r.concepts.coverage.unwrap() >= b.concept - 0.02);
        assert!(r.joint_failure_label <= 0.1 && r.joint_failure_concept.unwrap() <= 0.1);
        let (_, ab_hi) = abduction_coverage_bounds(alpha, 1.0);
        let (de_lo, _) = deduction_coverage_bounds(beta, 1.0);
        assert!(r.abduced_concept_coverage.unwrap() <= ab_hi + 0.02);
        assert!(r.deduced_label_coverage >= de_lo - 0.02);
        assert_eq!(r.labels.consistency, 1.0);
        assert_eq!(r.concepts.consistency, 1.0);
    }
}
