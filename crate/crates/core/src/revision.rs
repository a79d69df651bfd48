//! Joint revision of a label set and a concept set, the one-sided baselines,
//! and an exhaustive oracle for the largest mutually consistent sub-pair.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeTable;
use crate::sets::{ConceptSet, LabelSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Unrevised conformal sets.
    Raw,
    /// Label CP plus the argmax concept vector.
    To,
    /// Label CP plus its abduced concept set.
    Tab,
    /// Concept CP plus the argmax label.
    Co,
    /// Concept CP plus its deduced label set.
    Cde,
    /// Label side revised against the concept set; concept set untouched.
    Rpb,
    /// Joint revision of quantile-calibrated sets.
    Coco,
    /// Joint revision of e-value sets.
    CocoStar,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Raw,
        Method::To,
        Method::Tab,
        Method::Co,
        Method::Cde,
        Method::Rpb,
        Method::Coco,
        Method::CocoStar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::To => "to",
            Method::Tab => "tab",
            Method::Co => "co",
            Method::Cde => "cde",
            Method::Rpb => "rpb",
            Method::Coco => "coco",
            Method::CocoStar => "coco-star",
        }
    }

    /// Whether outputs must satisfy mutual consistency.
    pub fn is_joint_revision(self) -> bool {
        matches!(self, Method::Coco | Method::CocoStar)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSets {
    pub labels: LabelSet,
    pub concepts: ConceptSet,
    pub method: Method,
    #[serde(default)]
    pub provenance: Provenance,
}

pub fn abduction_set(labels: &LabelSet, kt: &KnowledgeTable) -> Result<ConceptSet> {
    kt.abduce(labels)
}

pub fn deduction_set(concepts: &ConceptSet, kt: &KnowledgeTable) -> Result<LabelSet> {
    kt.deduce_image(concepts)
}

/// `(concepts ∩ abduce(labels), labels ∩ deduce_image(concepts))`, one pass.
///
/// Concept members are checked against the label set directly, so the
/// abduced set is never materialized.
pub fn revise(
    concepts: &ConceptSet,
    labels: &LabelSet,
    kt: &KnowledgeTable,
) -> Result<(ConceptSet, LabelSet)> {
    let mut kept = Vec::new();
    let mut image = LabelSet::empty(kt.num_labels());
    concepts.try_for_each_index(kt.concept_space(), kt.cap(), |i| {
        let deduced = kt.deduced(i);
        if labels.intersects_slice(&deduced) {
            kept.push(i);
        }
        for &y in deduced.iter() {
            image.insert(y);
        }
    })?;
    Ok((ConceptSet::Explicit(kept), labels.intersection(&image)))
}

/// Same result as [`revise`], computed by materializing `abduce(labels)`.
pub fn revise_via_abduction(
    concepts: &ConceptSet,
    labels: &LabelSet,
    kt: &KnowledgeTable,
) -> Result<(ConceptSet, LabelSet)> {
    let abduced = kt.abduce(labels)?;
    let image = kt.deduce_image(concepts)?;
    let space = kt.concept_space();
    let mut kept = Vec::new();
    concepts.try_for_each_index(space, kt.cap(), |i| {
        if abduced.contains_index(space, i) {
            kept.push(i);
        }
    })?;
    Ok((ConceptSet::Explicit(kept), labels.intersection(&image)))
}

/// Every concept deduces into the label set and every label is deduced by
/// some concept.
pub fn is_mutually_consistent(
    concepts: &ConceptSet,
    labels: &LabelSet,
    kt: &KnowledgeTable,
) -> Result<bool> {
    let mut ok = true;
    let mut image = LabelSet::empty(kt.num_labels());
    concepts.try_for_each_index(kt.concept_space(), kt.cap(), |i| {
        let d = kt.deduced(i);
        ok &= labels.intersects_slice(&d);
        d.iter().for_each(|&y| image.insert(y));
    })?;
    Ok(ok && labels.is_subset(&image))
}

/// Inputs for [`apply_method`]; each method reads only what it needs.
#[derive(Clone, Debug, Default)]
pub struct MethodInputs {
    pub labels: Option<LabelSet>,
    pub concepts: Option<ConceptSet>,
    /// Full argmax tie set of the label distribution.
    pub argmax_labels: Option<LabelSet>,
    /// Product of per-concept argmax tie sets.
    pub argmax_concepts: Option<ConceptSet>,
}

pub fn apply_method(
    method: Method,
    inputs: &MethodInputs,
    kt: &KnowledgeTable,
) -> Result<PredictionSets> {
    let name = method.as_str();
    let need_labels =
        || inputs.labels.clone().ok_or(Error::MissingInput { method: name, input: "a label set" });
    let need_concepts =
        || inputs.concepts.clone().ok_or(Error::MissingInput { method: name, input: "a concept set" });
    let (labels, concepts) = match method {
        Method::Raw => (need_labels()?, need_concepts()?),
        Method::To => {
            let c = inputs.argmax_concepts.clone().ok_or(Error::MissingInput {
                method: "to",
                input: "the argmax concept vector",
            })?;
            (need_labels()?, c)
        }
        Method::Co => {
            let y = inputs.argmax_labels.clone().ok_or(Error::MissingInput {
                method: "co",
                input: "the argmax label",
            })?;
            (y, need_concepts()?)
        }
        Method::Tab => {
            let labels = need_labels()?;
            let concepts = kt.abduce(&labels)?;
            (labels, concepts)
        }
        Method::Cde => {
            let concepts = need_concepts()?;
            (kt.deduce_image(&concepts)?, concepts)
        }
        Method::Rpb => {
            let concepts = need_concepts()?;
            let image = kt.deduce_image(&concepts)?;
            (need_labels()?.intersection(&image), concepts)
        }
        Method::Coco | Method::CocoStar => {
            let (c, y) = revise(&need_concepts()?, &need_labels()?, kt)?;
            debug_assert!(
                is_mutually_consistent(&c, &y, kt).unwrap_or(true),
                "joint revision produced an inconsistent pair"
            );
            (y, c)
        }
    };
    Ok(PredictionSets { labels, concepts, method, provenance: Provenance::default() })
}

/// Largest `(Γ', Υ') ⊆ (Γ, Υ)` with `Γ' ⊆ abduce(Υ')` and
/// `Υ' ⊆ deduce_image(Γ')`, found as the greatest fixed point of elementwise
/// pruning. Deductions are recomputed from raw weight rows.
pub fn oracle_largest_consistent_pair(
    concepts: &ConceptSet,
    labels: &LabelSet,
    kt: &KnowledgeTable,
) -> Result<(ConceptSet, LabelSet)> {
    let members = concepts.materialize(kt.concept_space(), kt.cap())?;
    let candidate_pairs = members.len() as u128 * labels.len() as u128;
    if candidate_pairs > 1 << 20 {
        return Err(Error::cap(candidate_pairs, 1 << 20));
    }
    let deductions: Vec<(usize, BTreeSet<usize>)> =
        members.into_iter().map(|i| (i, row_argmax(&kt.row(i)))).collect();
    let mut gamma: BTreeSet<usize> = deductions.iter().map(|(i, _)| *i).collect();
    let mut upsilon: BTreeSet<usize> = labels.iter().collect();
    loop {
        let next_gamma: BTreeSet<usize> = deductions
            .iter()
            .filter(|(i, d)| gamma.contains(i) && d.iter().any(|y| upsilon.contains(y)))
            .map(|(i, _)| *i)
            .collect();
        let next_upsilon: BTreeSet<usize> = upsilon
            .iter()
            .copied()
            .filter(|y| deductions.iter().any(|(i, d)| next_gamma.contains(i) && d.contains(y)))
            .collect();
        if next_gamma == gamma && next_upsilon == upsilon {
            break;
        }
        gamma = next_gamma;
        upsilon = next_upsilon;
    }
    Ok((
        ConceptSet::Explicit(gamma.into_iter().collect()),
        LabelSet::from_labels(kt.num_labels(), upsilon),
    ))
}

fn row_argmax(row: &[f64]) -> BTreeSet<usize> {
    let max = row.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return BTreeSet::new();
    }
    (0..row.len()).filter(|&y| row[y] >= max - 1e-12).collect()
}
