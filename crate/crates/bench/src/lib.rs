//! Shared fixtures for the benchmarks.

use coco_core::knowledge::{KnowledgeProgram, KnowledgeTable};
use coco_core::synthio::{generate, ConceptNoise, PredictorSpec};
use coco_core::ExampleRecord;

/// Digit-sum table with `k` digits in base 10.
pub fn digit_sum(k: usize) -> KnowledgeTable {
    KnowledgeTable::compile(&KnowledgeProgram::DigitSum { k, base: 10 }).expect("valid program")
}

/// Calibration and test records from a moderately noisy predictor.
pub fn records(kt: &KnowledgeTable, n_cal: usize, n_test: usize) -> (Vec<ExampleRecord>, Vec<ExampleRecord>) {
    let k = kt.concept_space().k();
    let spec = PredictorSpec::uniform(k, ConceptNoise::temperature(1.0).with_logit_noise(1.0));
    generate(kt, &spec, n_cal, n_test, 7).expect("generation succeeds")
}
