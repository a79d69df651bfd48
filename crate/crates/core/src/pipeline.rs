//! End-to-end glue: calibration from records, per-record prediction under a
//! method, evaluation, and budgeted e-value selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{bonferroni_levels, score, CalibrationScores, QuantileCalibration};
use crate::error::{Error, Result};
use crate::evalues::{
    budget_select, evalue_concept_set, evalue_label_set, Aggregation, BudgetConfig, BudgetInput,
    BudgetSelection, EValueCalibration,
};
use crate::knowledge::KnowledgeTable;
use crate::metrics::{coverage, evaluate, EvalRecord, EvaluationReport};
use crate::revision::{apply_method, revise, Method, MethodInputs, PredictionSets, Provenance};
use crate::sets::{ConceptSet, LabelSet};
use crate::synthio::ExampleRecord;

/// Ground-truth scores of a calibration split. Concept scores are present
/// only when every record carries `c_star`.
pub fn calibration_scores(records: &[ExampleRecord], kt: &KnowledgeTable) -> Result<CalibrationScores> {
    if records.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let with_concepts = records.iter().filter(|r| r.c_star.is_some()).count();
    if with_concepts != 0 && with_concepts != records.len() {
        let r = records.iter().find(|r| r.c_star.is_none()).expect("some record lacks c_star");
        return Err(Error::MissingGroundTruth { id: r.id.clone(), side: "concepts" });
    }
    let mut out = CalibrationScores::default();
    for r in records {
        let p = r.label_probs(kt)?;
        if r.y_star >= p.len() {
            return Err(Error::DimensionMismatch {
                id: r.id.clone(),
                message: format!("y_star {} outside {} labels", r.y_star, p.len()),
            });
        }
        out.label.push(score(p[r.y_star]).value());
        if let Some(c) = &r.c_star {
            kt.concept_space().validate(c)?;
            out.concepts.push(
                c.iter().enumerate().map(|(j, &v)| score(r.concept_probs.factor(j)[v]).value()).collect(),
            );
        }
    }
    Ok(out)
}

/// Frozen calibration for both set constructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub alpha: f64,
    pub beta: f64,
    pub mode: Aggregation,
    pub quantile: QuantileCalibration,
    pub evalue: EValueCalibration,
}

impl CalibrationState {
    /// Quantile thresholds use `alpha` for labels and `beta / k` per concept.
    pub fn fit(
        records: &[ExampleRecord],
        kt: &KnowledgeTable,
        alpha: f64,
        beta: f64,
        mode: Aggregation,
    ) -> Result<Self> {
        let scores = calibration_scores(records, kt)?;
        if !scores.has_concepts() {
            return Err(Error::MissingGroundTruth { id: records[0].id.clone(), side: "concepts" });
        }
        let k = scores.num_concepts();
        let columns: Vec<Vec<f64>> = (0..k).map(|j| scores.concept_column(j)).collect();
        let quantile = QuantileCalibration::fit(&scores.label, &columns, alpha, bonferroni_levels(beta, k))?;
        let evalue = EValueCalibration::fit(&scores)?;
        Ok(Self { alpha, beta, mode, quantile, evalue })
    }
}

/// Raw conformal sets and the method output for one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub id: String,
    pub raw_labels: LabelSet,
    pub raw_concepts: ConceptSet,
    pub output: PredictionSets,
}

fn argmax_labels(p: &[f64]) -> LabelSet {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    LabelSet::from_labels(p.len(), (0..p.len()).filter(|&y| p[y] == max))
}

/// Raw sets at the given levels: e-value sets for `coco-star`, quantile sets
/// (Bonferroni product on concepts) otherwise.
fn raw_sets(
    r: &ExampleRecord,
    label_probs: &[f64],
    state: &CalibrationState,
    kt: &KnowledgeTable,
    method: Method,
) -> Result<(LabelSet, ConceptSet)> {
    if method == Method::CocoStar {
        Ok((
            evalue_label_set(label_probs, &state.evalue, state.alpha)?,
            evalue_concept_set(&r.concept_probs, &state.evalue, state.beta, state.mode, kt.cap())?,
        ))
    } else {
        Ok((state.quantile.label_set(label_probs), state.quantile.concept_set(&r.concept_probs)))
    }
}

fn predict_one(
    r: &ExampleRecord,
    state: &CalibrationState,
    kt: &KnowledgeTable,
    method: Method,
    provenance: &Provenance,
) -> Result<RecordPrediction> {
    if r.concept_probs.domain_sizes() != kt.concept_space().domain_sizes() {
        return Err(Error::DimensionMismatch {
            id: r.id.clone(),
            message: "concept domains differ from the knowledge".into(),
        });
    }
    let label_probs = r.label_probs(kt)?;
    let (raw_labels, raw_concepts) = raw_sets(r, &label_probs, state, kt, method)?;
    let inputs = MethodInputs {
        labels: Some(raw_labels.clone()),
        concepts: Some(raw_concepts.clone()),
        argmax_labels: Some(argmax_labels(&label_probs)),
        argmax_concepts: Some(ConceptSet::product(r.concept_probs.argmax_sets())),
    };
    let mut output = apply_method(method, &inputs, kt)?;
    output.provenance = provenance.clone();
    Ok(RecordPrediction { id: r.id.clone(), raw_labels, raw_concepts, output })
}

/// Applies `method` to every record. `parallel` only changes scheduling.
pub fn predict(
    records: &[ExampleRecord],
    state: &CalibrationState,
    kt: &KnowledgeTable,
    method: Method,
    provenance: &Provenance,
    parallel: bool,
) -> Result<Vec<RecordPrediction>> {
    let one = |r: &ExampleRecord| predict_one(r, state, kt, method, provenance);
    if parallel {
        records.par_iter().map(one).collect()
    } else {
        records.iter().map(one).collect()
    }
}

/// Metrics of `predictions` against the ground truth in `records`, matched
/// by position.
pub fn evaluate_predictions(
    predictions: &[RecordPrediction],
    records: &[ExampleRecord],
    kt: &KnowledgeTable,
    alpha: f64,
    beta: f64,
) -> Result<EvaluationReport> {
    if predictions.len() != records.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let eval: Vec<EvalRecord<'_>> = predictions
        .iter()
        .zip(records)
        .map(|(p, r)| {
            if p.id != r.id {
                return Err(Error::InvalidArgument(format!("prediction `{}` paired with record `{}`", p.id, r.id)));
            }
            Ok(EvalRecord {
                y_star: r.y_star,
                c_star: r.c_star.as_deref(),
                raw_labels: &p.raw_labels,
                raw_concepts: &p.raw_concepts,
                output: &p.output,
            })
        })
        .collect::<Result<_>>()?;
    evaluate(&eval, kt, alpha, beta)
}

/// Per-iteration coverage of the jointly revised e-value sets at the
/// selected levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisedCoverage {
    pub label: f64,
    pub concept: f64,
    pub label_size: f64,
    pub concept_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub selection: BudgetSelection,
    pub revised: Vec<RevisedCoverage>,
    pub mean_label_coverage: f64,
    pub mean_concept_coverage: f64,
}

/// Selects levels on `test` under the budgets, then measures the revised
/// sets each iteration's levels produce.
pub fn budget_evaluate(
    calibration: &[ExampleRecord],
    test: &[ExampleRecord],
    kt: &KnowledgeTable,
    config: &BudgetConfig,
) -> Result<BudgetReport> {
    let scores = calibration_scores(calibration, kt)?;
    let label_probs: Vec<Vec<f64>> =
        test.iter().map(|r| r.label_probs(kt).map(|p| p.into_owned())).collect::<Result<_>>()?;
    let inputs: Vec<BudgetInput<'_>> = test
        .iter()
        .zip(&label_probs)
        .map(|(r, lp)| BudgetInput {
            label_probs: lp,
            concepts: &r.concept_probs,
            y_star: Some(r.y_star),
            c_star: r.c_star.as_deref(),
        })
        .collect();
    let selection = budget_select(&scores, &inputs, config)?;
    let space = kt.concept_space();
    let revised = (0..selection.selections.len())
        .into_par_iter()
        .map(|t| {
            let cal = selection.calibration(t);
            let s = &selection.selections[t];
            let mut hits = (Vec::new(), Vec::new());
            let (mut ls, mut cs) = (0.0, 0.0);
            for (r, lp) in test.iter().zip(&label_probs) {
                let labels = evalue_label_set(lp, &cal, s.alpha)?;
                let concepts = evalue_concept_set(&r.concept_probs, &cal, s.beta, config.mode, kt.cap())?;
                let (c, y) = revise(&concepts, &labels, kt)?;
                hits.0.push(y.contains(r.y_star));
                if let Some(cs_) = &r.c_star {
                    hits.1.push(c.contains(space, cs_));
                }
                ls += y.len() as f64;
                cs += c.len() as f64;
            }
            let n = test.len() as f64;
            Ok(RevisedCoverage {
                label: coverage(hits.0)?,
                concept: coverage(hits.1)?,
                label_size: ls / n,
                concept_size: cs / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let t = revised.len() as f64;
    Ok(BudgetReport {
        mean_label_coverage: revised.iter().map(|r| r.label).sum::<f64>() / t,
        mean_concept_coverage: revised.iter().map(|r| r.concept).sum::<f64>() / t,
        selection,
        revised,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::KnowledgeProgram;
    use crate::synthio::{generate, ConceptNoise, PredictorSpec};

    fn setup() -> (KnowledgeTable, Vec<ExampleRecord>, Vec<ExampleRecord>) {
        let kt = KnowledgeTable::compile(&KnowledgeProgram::DigitSum { k: 2, base: 4 }).unwrap();
        let spec = PredictorSpec::uniform(2, ConceptNoise::temperature(1.0).with_logit_noise(1.0));
        let (cal, test) = generate(&kt, &spec, 300, 400, 5).unwrap();
        (kt, cal, test)
    }

    #[test]
    fn calibration_scores_match_records() {
        let (kt, cal, _) = setup();
        let s = calibration_scores(&cal, &kt).unwrap();
        assert_eq!(s.n(), 300);
        let r = &cal[7];
        let c = r.c_star.as_ref().unwrap();
        assert_eq!(s.label[7], -r.label_probs.as_ref().unwrap()[r.y_star].max(1e-12).ln());
        assert_eq!(s.concepts[7][1], -r.concept_probs.factor(1)[c[1]].max(1e-12).ln());
    }

    #[test]
    fn mixed_concept_truth_is_rejected() {
        let (kt, mut cal, _) = setup();
        cal[3].c_star = None;
        assert!(matches!(calibration_scores(&cal, &kt), Err(Error::MissingGroundTruth { .. })));
    }

    #[test]
    fn predict_parallel_matches_sequential() {
        let (kt, cal, test) = setup();
        let state = CalibrationState::fit(&cal, &kt, 0.1, 0.1, Aggregation::Avg).unwrap();
        for m in Method::ALL {
            let a = predict(&test, &state, &kt, m, &Provenance::default(), true).unwrap();
            let b = predict(&test, &state, &kt, m, &Provenance::default(), false).unwrap();
            assert_eq!(a, b);
            let report = evaluate_predictions(&a, &test, &kt, 0.1, 0.1).unwrap();
            assert_eq!(report.method, m);
            if m.is_joint_revision() {
                assert_eq!(report.labels.consistency, 1.0);
            }
        }
    }

    #[test]
    fn budget_report_is_consistent_with_selection() {
        let (kt, cal, test) = setup();
        let config = BudgetConfig { iterations: 5, seed: 2, ..BudgetConfig::default() };
        let report = budget_evaluate(&cal, &test[..100], &kt, &config).unwrap();
        assert_eq!(report.revised.len(), 5);
        for (s, r) in report.selection.selections.iter().zip(&report.revised) {
            assert!(r.label_size <= s.label_size + 1e-12);
            assert!(r.concept_size <= s.concept_size + 1e-12);
        }
    }
}
