//! Coverage, size and consistency metrics, joint-failure estimates, and the
//! coverage lower bounds for revised sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeTable;
use crate::revision::{Method, PredictionSets};
use crate::sets::{ConceptSet, LabelSet};

/// Fraction of `true` entries.
pub fn coverage(hits: impl IntoIterator<Item = bool>) -> Result<f64> {
    let (n, h) = hits.into_iter().fold((0usize, 0usize), |(n, h), x| (n + 1, h + x as usize));
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(h as f64 / n as f64)
}

pub fn mean_size(sizes: impl IntoIterator<Item = u128>) -> Result<f64> {
    let (n, total) = sizes.into_iter().fold((0usize, 0f64), |(n, t), s| (n + 1, t + s as f64));
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Concepts,
    Labels,
}

/// Consistency of one record. Concept side: fraction of concepts whose
/// deduction meets the label set. Label side: fraction of labels deduced by
/// some member of the concept set. Empty sets score 0.
pub fn record_consistency(
    concepts: &ConceptSet,
    labels: &LabelSet,
    kt: &KnowledgeTable,
    side: Side,
) -> Result<f64> {
    match side {
        Side::Concepts => {
            let mut hits = 0u128;
            concepts.try_for_each_index(kt.concept_space(), kt.cap(), |i| {
                hits += kt.entails_any(i, labels) as u128;
            })?;
            Ok(hits as f64 / concepts.len().max(1) as f64)
        }
        Side::Labels => {
            let image = kt.deduce_image(concepts)?;
            let hits = labels.intersection(&image).len();
            Ok(hits as f64 / labels.len().max(1) as f64)
        }
    }
}

pub fn consistency(sets: &[PredictionSets], kt: &KnowledgeTable, side: Side) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per: Vec<f64> = sets
        .par_iter()
        .map(|s| record_consistency(&s.concepts, &s.labels, kt, side))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Lower bounds on revised-set coverage. `*_raw` may fall outside [0, 1];
/// the unprefixed values are clamped for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub concept_raw: f64,
    pub label_raw: f64,
    pub concept: f64,
    pub label: f64,
}

/// `concept >= (1-alpha) delta_ab - beta + jf_concept`,
/// `label >= (1-beta) delta_de - alpha + jf_label`.
pub fn theoretical_bounds(
    alpha: f64,
    beta: f64,
    delta_ab: f64,
    delta_de: f64,
    joint_failure_concept: f64,
    joint_failure_label: f64,
) -> Bounds {
    let concept_raw = (1.0 - alpha) * delta_ab - beta + joint_failure_concept;
    let label_raw = (1.0 - beta) * delta_de - alpha + joint_failure_label;
    Bounds {
        concept_raw,
        label_raw,
        concept: concept_raw.clamp(0.0, 1.0),
        label: label_raw.clamp(0.0, 1.0),
    }
}

/// `((1-alpha) delta_ab, alpha + delta_ab)` for the abduced concept set.
pub fn abduction_coverage_bounds(alpha: f64, delta_ab: f64) -> (f64, f64) {
    ((1.0 - alpha) * delta_ab, alpha + delta_ab)
}

/// `((1-beta) delta_de, beta + delta_de)` for the deduced label set.
pub fn deduction_coverage_bounds(beta: f64, delta_de: f64) -> (f64, f64) {
    ((1.0 - beta) * delta_de, beta + delta_de)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideMetrics {
    pub coverage: Option<f64>,
    pub mean_size: f64,
    pub consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub n_test: usize,
    pub alpha: f64,
    pub beta: f64,
    pub labels: SideMetrics,
    pub concepts: SideMetrics,
    pub delta_ab: Option<f64>,
    pub delta_de: Option<f64>,
    /// `P(y* not in raw label set and y* not in deduce_image(raw concept set))`
    pub joint_failure_label: f64,
    /// `P(c* not in raw concept set and c* not in abduce(raw label set))`
    pub joint_failure_concept: Option<f64>,
    /// Coverage of the raw sets and of their abductive/deductive images.
    pub raw_label_coverage: f64,
    pub raw_concept_coverage: Option<f64>,
    pub deduced_label_coverage: f64,
    pub abduced_concept_coverage: Option<f64>,
    pub bounds: Option<Bounds>,
}

/// One test record as seen by [`evaluate`].
#[derive(Clone, Debug)]
pub struct EvalRecord<'a> {
    pub y_star: usize,
    pub c_star: Option<&'a [usize]>,
    pub raw_labels: &'a LabelSet,
    pub raw_concepts: &'a ConceptSet,
    pub output: &'a PredictionSets,
}

struct PerRecord {
    label_hit: bool,
    concept_hit: Option<bool>,
    label_size: u128,
    concept_size: u128,
    label_consistency: f64,
    concept_consistency: f64,
    raw_label_hit: bool,
    deduced_label_hit: bool,
    raw_concept_hit: Option<bool>,
    abduced_concept_hit: Option<bool>,
}

/// Metrics for one method over a test split. `alpha` and `beta` are the
/// miscoverage levels the raw sets were built at.
pub fn evaluate(
    records: &[EvalRecord<'_>],
    kt: &KnowledgeTable,
    alpha: f64,
    beta: f64,
) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let method = records[0].output.method;
    let space = kt.concept_space();
    let per: Vec<PerRecord> = records
        .par_iter()
        .map(|r| {
            let out = r.output;
            let mut deduced_label_hit = false;
            r.raw_concepts.try_for_each_index(space, kt.cap(), |i| {
                deduced_label_hit = deduced_label_hit || kt.deduced(i).contains(&r.y_star);
            })?;
            let (concept_hit, raw_concept_hit, abduced_concept_hit) = match r.c_star {
                Some(c) => {
                    space.validate(c)?;
                    let idx = space.index_of(c);
                    (
                        Some(out.concepts.contains(space, c)),
                        Some(r.raw_concepts.contains(space, c)),
                        Some(kt.entails_any(idx, r.raw_labels)),
                    )
                }
                None => (None, None, None),
            };
            Ok(PerRecord {
                label_hit: out.labels.contains(r.y_star),
                concept_hit,
                label_size: out.labels.len() as u128,
                concept_size: out.concepts.len(),
                label_consistency: record_consistency(&out.concepts, &out.labels, kt, Side::Labels)?,
                concept_consistency: record_consistency(&out.concepts, &out.labels, kt, Side::Concepts)?,
                raw_label_hit: r.raw_labels.contains(r.y_star),
                deduced_label_hit,
                raw_concept_hit,
                abduced_concept_hit,
            })
        })
        .collect::<Result<_>>()?;

    let n = per.len() as f64;
    let mean = |f: &dyn Fn(&PerRecord) -> f64| per.iter().map(f).sum::<f64>() / n;
    let opt_cov = |f: &dyn Fn(&PerRecord) -> Option<bool>| -> Option<f64> {
        per.iter().map(f).collect::<Option<Vec<bool>>>().map(|v| coverage(v).unwrap_or(0.0))
    };

    let deltas = match records.iter().map(|r| r.c_star.map(|c| (c, r.y_star))).collect::<Option<Vec<_>>>() {
        Some(pairs) => Some(kt.estimate_deltas(pairs)?),
        None => None,
    };
    let joint_failure_label = mean(&|p| (!p.raw_label_hit && !p.deduced_label_hit) as u8 as f64);
    let joint_failure_concept = opt_cov(&|p| {
        Some(!p.raw_concept_hit? && !p.abduced_concept_hit?)
    });
    let bounds = match (deltas, joint_failure_concept) {
        (Some(d), Some(jfc)) => Some(theoretical_bounds(
            alpha,
            beta,
            d.delta_ab,
            d.delta_de,
            jfc,
            joint_failure_label,
        )),
        _ => None,
    };

    Ok(EvaluationReport {
        method,
        n_test: per.len(),
        alpha,
        beta,
        labels: SideMetrics {
            coverage: Some(coverage(per.iter().map(|p| p.label_hit))?),
            mean_size: mean_size(per.iter().map(|p| p.label_size))?,
            consistency: mean(&|p| p.label_consistency),
        },
        concepts: SideMetrics {
            coverage: opt_cov(&|p| p.concept_hit),
            mean_size: mean_size(per.iter().map(|p| p.concept_size))?,
            consistency: mean(&|p| p.concept_consistency),
        },
        delta_ab: deltas.map(|d| d.delta_ab),
        delta_de: deltas.map(|d| d.delta_de),
        joint_failure_label,
        joint_failure_concept,
        raw_label_coverage: coverage(per.iter().map(|p| p.raw_label_hit))?,
        raw_concept_coverage: opt_cov(&|p| p.raw_concept_hit),
        deduced_label_coverage: coverage(per.iter().map(|p| p.deduced_label_hit))?,
        abduced_concept_coverage: opt_cov(&|p| p.abduced_concept_hit),
        bounds,
    })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::KnowledgeProgram;
    use crate::revision::Provenance;

    #[test]
    fn coverage_cases() {
        assert_eq!(coverage([true, true]).unwrap(), 1.0);
        assert_eq!(coverage([false, false]).unwrap(), 0.0);
        assert_eq!(coverage([true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(coverage(std::iter::empty()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn size_cases() {
        assert_eq!(mean_size([1, 1, 1]).unwrap(), 1.0);
        assert_eq!(mean_size([0, 0]).unwrap(), 0.0);
        assert_eq!(mean_size([1, 3]).unwrap(), 2.0);
        // lazy products report their cardinality without enumeration
        let huge = ConceptSet::product(vec![(0..1000).collect(); 4]);
        assert_eq!(mean_size([huge.len()]).unwrap(), 1e12);
    }

    #[test]
    fn consistency_cases() {
        let kt = KnowledgeTable::compile(&KnowledgeProgram::DigitSum { k: 2, base: 10 }).unwrap();
        let y = LabelSet::from_labels(19, [5]);
        let empty = record_consistency(&ConceptSet::empty(), &y, &kt, Side::Concepts).unwrap();
        assert_eq!(empty, 0.0);
        let one = ConceptSet::from_indices(vec![23]);
        assert_eq!(record_consistency(&one, &y, &kt, Side::Concepts).unwrap(), 1.0);
        let half = ConceptSet::from_indices(vec![23, 44]);
        assert_eq!(record_consistency(&half, &y, &kt, Side::Concepts).unwrap(), 0.5);
        let y2 = LabelSet::from_labels(19, [5, 6]);
        assert_eq!(record_consistency(&one, &y2, &kt, Side::Labels).unwrap(), 0.5);

        let sets = vec![PredictionSets {
            labels: y.clone(),
            concepts: one,
            method: Method::Coco,
            provenance: Provenance::default(),
        }];
        assert_eq!(consistency(&sets, &kt, Side::Concepts).unwrap(), 1.0);
        assert!(consistency(&[], &kt, Side::Labels).is_err());
    }

    #[test]
    fn bound_values() {
        let b = theoretical_bounds(0.1, 0.1, 1.0, 0.8, 0.0, 0.0);
        assert!((b.label_raw - 0.62).abs() < 1e-12);
        let b = theoretical_bounds(0.1, 0.1, 1.0, 1.0, 0.0, 0.0);
        assert!((b.label - 0.8).abs() < 1e-12 && (b.concept - 0.8).abs() < 1e-12);
        let b = theoretical_bounds(0.1, 0.1, 1.0, 0.8, 0.0, 0.06);
        assert!((b.label - 0.68).abs() < 1e-12);
        let b = theoretical_bounds(0.9, 0.9, 0.1, 0.1, 0.0, 0.0);
        assert!(b.label_raw < 0.0 && b.label == 0.0);
        assert_eq!(abduction_coverage_bounds(0.1, 1.0), (0.9, 1.1));
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        assert_eq!(MeanStd::of(&[4.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
        assert_eq!(m.to_string(), "2.00 ± 1.00");
    }
}
