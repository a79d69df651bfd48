//! Split conformal prediction with `-log p` nonconformity scores.
//!
//! Thresholds are the `ceil((n+1)(1-level))`-th smallest calibration score,
//! or `+inf` (the full set) when that rank exceeds `n`. A candidate enters a
//! set when its score is at most the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::ConceptSpace;
use crate::sets::{ConceptSet, LabelSet};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Row-sum tolerance for probability vectors.
pub const PROB_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NonconformityScore(f64);

impl NonconformityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn score(probability: f64) -> NonconformityScore {
    NonconformityScore(-probability.max(PROB_CLAMP).ln())
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("miscoverage level {level} not in (0, 1)")))
    }
}

/// Finite-sample corrected empirical quantile of `scores` at miscoverage
/// `level`. Input order does not matter.
pub fn calibrate_quantile(scores: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN calibration score".into()));
    }
    let n = scores.len();
    // absorb rounding so an integral (n+1)(1-level) is not bumped to the next rank
    let rank = ((n as f64 + 1.0) * (1.0 - level) - 1e-9).ceil() as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[rank.max(1) - 1])
}

/// `{ y : score(p(y)) <= q }`
pub fn label_set(label_probs: &[f64], q: f64) -> LabelSet {
    LabelSet::from_labels(
        label_probs.len(),
        label_probs.iter().enumerate().filter(|(_, &p)| score(p).0 <= q).map(|(y, _)| y),
    )
}

/// Per-concept analogue of [`label_set`], as a sorted value list.
pub fn per_concept_set(concept_probs: &[f64], q: f64) -> Vec<usize> {
    concept_probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| score(p).0 <= q)
        .map(|(v, _)| v)
        .collect()
}

pub fn product_concept_set(factors: Vec<Vec<usize>>) -> ConceptSet {
    ConceptSet::product(factors)
}

/// Equal split `beta / k` so the product set covers at level `1 - beta`.
pub fn bonferroni_levels(beta: f64, k: usize) -> Vec<f64> {
    vec![beta / k as f64; k]
}

/// Per-concept categorical distributions `p(C_j | x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FactorizedConceptDistribution {
    per_concept: Vec<Vec<f64>>,
}

pub(crate) fn check_probability_vector(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what} is empty")));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidDistribution(format!("{what} has entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

impl FactorizedConceptDistribution {
    pub fn new(per_concept: Vec<Vec<f64>>) -> Result<Self> {
        if per_concept.is_empty() {
            return Err(Error::InvalidDistribution("no concepts".into()));
        }
        for (j, p) in per_concept.iter().enumerate() {
            check_probability_vector(p, &format!("concept {j}"))?;
        }
        Ok(Self { per_concept })
    }

    pub fn k(&self) -> usize {
        self.per_concept.len()
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.per_concept
    }

    pub fn factor(&self, j: usize) -> &[f64] {
        &self.per_concept[j]
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.per_concept.iter().map(Vec::len).collect()
    }

    /// `prod_j p_j(c_j)`
    pub fn joint(&self, c: &[usize]) -> f64 {
        self.per_concept.iter().zip(c).map(|(p, &v)| p[v]).product()
    }

    /// Per-concept argmax tie sets; their product is the joint argmax set.
    pub fn argmax_sets(&self) -> Vec<Vec<usize>> {
        self.per_concept
            .iter()
            .map(|p| {
                let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                p.iter().enumerate().filter(|(_, &x)| x == max).map(|(v, _)| v).collect()
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for FactorizedConceptDistribution {
    type Error = Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FactorizedConceptDistribution> for Vec<Vec<f64>> {
    fn from(p: FactorizedConceptDistribution) -> Self {
        p.per_concept
    }
}

/// Concept vectors whose whole-vector score `-log prod_j p_j(c_j)` is at
/// most `q`.
pub fn full_vector_concept_set(
    p: &FactorizedConceptDistribution,
    q: f64,
    cap: usize,
) -> Result<ConceptSet> {
    if q.is_infinite() {
        let space = ConceptSpace::new(p.domain_sizes())?;
        space.check_cap(cap)?;
        return Ok(ConceptSet::full(&space));
    }
    // suffix products of per-concept maxima bound the best completion
    let k = p.k();
    let mut best_rest = vec![1.0; k + 1];
    for j in (0..k).rev() {
        best_rest[j] = best_rest[j + 1] * p.factor(j).iter().copied().fold(0.0, f64::max);
    }
    let sizes = p.domain_sizes();
    let mut out = Vec::new();
    let mut c = vec![0usize; k];
    full_vector_dfs(p, q, &best_rest, &sizes, 0, 1.0, &mut c, &mut out, cap)?;
    Ok(ConceptSet::Explicit(out))
}

#[allow(clippy::too_many_arguments)]
fn full_vector_dfs(
    p: &FactorizedConceptDistribution,
    q: f64,
    best_rest: &[f64],
    sizes: &[usize],
    j: usize,
    mass: f64,
    c: &mut Vec<usize>,
    out: &mut Vec<usize>,
    cap: usize,
) -> Result<()> {
    if j == c.len() {
        // same product order as FactorizedConceptDistribution::joint
        if score(p.joint(c)).0 <= q {
            if out.len() == cap {
                return Err(Error::cap(cap as u128 + 1, cap));
            }
            out.push(c.iter().zip(sizes).fold(0, |acc, (&v, &d)| acc * d + v));
        }
        return Ok(());
    }
    for v in 0..sizes[j] {
        let m = mass * p.factor(j)[v];
        // prune with a relative margin so rounding never drops a member
        if score(m * best_rest[j + 1] * (1.0 + 1e-9)).0 > q {
            continue;
        }
        c[j] = v;
        full_vector_dfs(p, q, best_rest, sizes, j + 1, m, c, out, cap)?;
    }
    Ok(())
}

/// Ground-truth calibration scores, one entry per calibration record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScores {
    /// `-log p(y*|x_i)`
    pub label: Vec<f64>,
    /// `concepts[i][j] = -log p_j(c*_ij|x_i)`; empty when concept truth is absent.
    pub concepts: Vec<Vec<f64>>,
}

impl CalibrationScores {
    pub fn n(&self) -> usize {
        self.label.len()
    }

    /// Scores of concept `j` across records.
    pub fn concept_column(&self, j: usize) -> Vec<f64> {
        self.concepts.iter().map(|row| row[j]).collect()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.first().map_or(0, Vec::len)
    }

    pub fn has_concepts(&self) -> bool {
        !self.concepts.is_empty()
    }
}

/// Miscoverage levels: `alpha` for labels, one `beta_j` per concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub alpha: f64,
    pub betas: Vec<f64>,
}

/// Frozen quantile calibration state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileCalibration {
    pub n: usize,
    #[serde(with = "threshold")]
    pub q_label: f64,
    #[serde(with = "thresholds")]
    pub q_concepts: Vec<f64>,
    pub levels: Levels,
    #[serde(default, with = "opt_threshold", skip_serializing_if = "Option::is_none")]
    pub full_vector_q: Option<f64>,
}

impl QuantileCalibration {
    /// `concept_scores[j]` holds the calibration scores of concept `j`.
    pub fn fit(
        label_scores: &[f64],
        concept_scores: &[Vec<f64>],
        alpha: f64,
        betas: Vec<f64>,
    ) -> Result<Self> {
        if betas.len() != concept_scores.len() {
            return Err(Error::InvalidArgument(format!(
                "{} concept levels for {} concepts",
                betas.len(),
                concept_scores.len()
            )));
        }
        let q_label = calibrate_quantile(label_scores, alpha)?;
        let q_concepts = concept_scores
            .iter()
            .zip(&betas)
            .map(|(s, &b)| calibrate_quantile(s, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: label_scores.len(),
            q_label,
            q_concepts,
            levels: Levels { alpha, betas },
            full_vector_q: None,
        })
    }

    /// Adds a whole-vector threshold at miscoverage `beta`.
    pub fn with_full_vector(mut self, vector_scores: &[f64], beta: f64) -> Result<Self> {
        self.full_vector_q = Some(calibrate_quantile(vector_scores, beta)?);
        Ok(self)
    }

    pub fn label_set(&self, label_probs: &[f64]) -> LabelSet {
        label_set(label_probs, self.q_label)
    }

    /// Product of per-concept sets.
    pub fn concept_set(&self, p: &FactorizedConceptDistribution) -> ConceptSet {
        product_concept_set(
            p.factors().iter().zip(&self.q_concepts).map(|(pj, &q)| per_concept_set(pj, q)).collect(),
        )
    }

    pub fn full_vector_set(&self, p: &FactorizedConceptDistribution, cap: usize) -> Result<ConceptSet> {
        let q = self.full_vector_q.ok_or(Error::MissingInput {
            method: "full-vector concept set",
            input: "a whole-vector threshold",
        })?;
        full_vector_concept_set(p, q, cap)
    }
}

// +inf does not survive JSON as a number; it is written as the string "inf".
mod threshold {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Finite(f64),
        Tag(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v.is_infinite() && v > 0.0 {
            Repr::Tag("inf".into())
        } else {
            Repr::Finite(v)
        }
    }

    pub(super) fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Finite(v) => Ok(v),
            Repr::Tag(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Tag(s) => Err(E::custom(format!("bad threshold `{s}`"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod thresholds {
    use super::threshold::{from_repr, to_repr, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&x| to_repr(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}

mod opt_threshold {
    use super::threshold::{from_repr, to_repr, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(to_repr).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
    }
}
