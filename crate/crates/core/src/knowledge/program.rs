//! Built-in knowledge programs: rule families that compile to a
//! concept-to-label weight table.

use serde::{Deserialize, Serialize};

use super::space::{ConceptSpace, LabelSpace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "program", rename_all = "kebab-case")]
pub enum KnowledgeProgram {
    /// `k` digits in `[0, base)`; the label is their sum.
    DigitSum { k: usize, base: usize },
    /// `k` digits in `[0, base)`; the label is the parity of their sum.
    SumParity { k: usize, base: usize },
    /// `k` binary indicators; the label is the number of active ones.
    ActiveCount { k: usize },
    /// `k` categorical votes over `values` options; the label is the winning
    /// option, or the extra conflict label `values` when `conflict` fires.
    MajorityVote {
        k: usize,
        values: usize,
        /// Value ids from highest to lowest priority; breaks count ties.
        priority: Vec<usize>,
        #[serde(default)]
        conflict: Option<ConflictRule>,
    },
    AttributeRules(AttributeRules),
    /// Raw rows in mixed-radix index order.
    ExplicitTable { domain_sizes: Vec<usize>, rows: Vec<Vec<f64>> },
}

/// The conflict label wins when the two named options tie and neither is
/// beaten by any other option.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictRule {
    pub first: usize,
    pub second: usize,
}

/// Conjunctive rules over binary attributes. A rule with several labels is a
/// shared signature: the labels cannot be told apart from the attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRules {
    pub num_attributes: usize,
    pub num_labels: usize,
    pub rules: Vec<AttributeRule>,
    #[serde(default)]
    pub unmatched: UnmatchedPolicy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attribute_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub labels: Vec<usize>,
    #[serde(default)]
    pub require: Vec<usize>,
    #[serde(default)]
    pub forbid: Vec<usize>,
}

impl AttributeRule {
    fn fires(&self, c: &[usize]) -> bool {
        self.require.iter().all(|&a| c[a] == 1) && self.forbid.iter().all(|&a| c[a] == 0)
    }

    fn compatible(&self, c: &[usize]) -> bool {
        self.forbid.iter().all(|&a| c[a] == 0)
    }
}

/// What a concept vector gets when no rule fires.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnmatchedPolicy {
    /// All-zero row.
    #[default]
    Infeasible,
    /// Uniform mass over the labels of rules with no forbidden attribute
    /// active; all-zero if there are none.
    UniformOverCompatible,
}

impl AttributeRules {
    /// Ten-class animal/vehicle rules over seven attributes
    /// (wheels, metal, wings, animal, hair, horns, snout). Automobile/truck and
    /// dog/horse share signatures.
    pub fn cifar10() -> Self {
        const WHL: usize = 0;
        const MET: usize = 1;
        const WNG: usize = 2;
        const ANI: usize = 3;
        const HAI: usize = 4;
        const HRN: usize = 5;
        const SNT: usize = 6;
        let rule = |labels: &[usize], require: &[usize], forbid: &[usize]| AttributeRule {
            labels: labels.to_vec(),
            require: require.to_vec(),
            forbid: forbid.to_vec(),
        };
        // airplane, automobile, bird, cat, deer, dog, frog, horse, ship, truck
        let rules = vec![
            rule(&[0], &[MET, WNG], &[ANI]),
            rule(&[1, 9], &[WHL, MET], &[WNG, ANI]),
            rule(&[2], &[ANI, WNG], &[MET]),
            rule(&[6], &[ANI], &[MET, HAI]),
            rule(&[4], &[ANI, HAI, HRN], &[MET, WNG]),
            rule(&[3], &[ANI, HAI], &[MET, WNG, HRN, SNT]),
            rule(&[5, 7], &[ANI, HAI, SNT], &[MET, WNG, HRN]),
            rule(&[8], &[MET], &[ANI, WHL, WNG]),
        ];
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        AttributeRules {
            num_attributes: 7,
            num_labels: 10,
            rules,
            unmatched: UnmatchedPolicy::Infeasible,
            attribute_names: names(&["whl", "met", "wng", "ani", "hai", "hrn", "snt"]),
            label_names: names(&[
                "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship",
                "truck",
            ]),
        }
    }
}

impl KnowledgeProgram {
    /// Five reviewers voting Positive/Negative/Neutral/Unknown with a
    /// Positive-Negative conflict label.
    pub fn review_majority() -> Self {
        KnowledgeProgram::MajorityVote {
            k: 5,
            values: 4,
            priority: vec![0, 1, 2, 3],
            conflict: Some(ConflictRule { first: 0, second: 1 }),
        }
    }

    /// Checks parameters and returns the spaces the program is defined over.
    pub fn spaces(&self) -> Result<(ConceptSpace, LabelSpace)> {
        let invalid = |m: String| Err(Error::InvalidProgram(m));
        match self {
            KnowledgeProgram::DigitSum { k, base } | KnowledgeProgram::SumParity { k, base } => {
                if *k == 0 || *base == 0 {
                    return invalid(format!("digit programs need k >= 1 and base >= 1, got k={k} base={base}"));
                }
                let labels = match self {
                    KnowledgeProgram::DigitSum { .. } => k
                        .checked_mul(base - 1)
                        .and_then(|x| x.checked_add(1))
                        .ok_or_else(|| Error::InvalidProgram("label range overflows".into()))?,
                    _ => 2,
                };
                Ok((ConceptSpace::uniform(*k, *base)?, LabelSpace::new(labels)?))
            }
            KnowledgeProgram::ActiveCount { k } => {
                if *k == 0 {
                    return invalid("active-count needs k >= 1".into());
                }
                Ok((ConceptSpace::uniform(*k, 2)?, LabelSpace::new(k + 1)?))
            }
            KnowledgeProgram::MajorityVote { k, values, priority, conflict } => {
                if *k == 0 || *values == 0 {
                    return invalid("majority-vote needs k >= 1 and values >= 1".into());
                }
                let mut sorted = priority.clone();
                sorted.sort_unstable();
                if sorted != (0..*values).collect::<Vec<_>>() {
                    return invalid(format!(
                        "priority {priority:?} is not a permutation of 0..{values}"
                    ));
                }
                let mut labels = *values;
                if let Some(rule) = conflict {
                    if rule.first == rule.second || rule.first >= *values || rule.second >= *values
                    {
                        return invalid(format!("bad conflict pair {rule:?}"));
                    }
                    labels += 1;
                }
                Ok((ConceptSpace::uniform(*k, *values)?, LabelSpace::new(labels)?))
            }
            KnowledgeProgram::AttributeRules(r) => {
                if r.num_attributes == 0 || r.num_labels == 0 {
                    return invalid("attribute rules need attributes and labels".into());
                }
                for (i, rule) in r.rules.iter().enumerate() {
                    if rule.labels.is_empty() {
                        return invalid(format!("rule {i} has no labels"));
                    }
                    if let Some(y) = rule.labels.iter().find(|&&y| y >= r.num_labels) {
                        return invalid(format!("rule {i} names label {y} >= {}", r.num_labels));
                    }
                    let attrs = rule.require.iter().chain(&rule.forbid);
                    if let Some(a) = attrs.clone().find(|&&a| a >= r.num_attributes) {
                        return invalid(format!("rule {i} names attribute {a}"));
                    }
                    if rule.require.iter().any(|a| rule.forbid.contains(a)) {
                        return invalid(format!("rule {i} both requires and forbids an attribute"));
                    }
                }
                if !r.label_names.is_empty() && r.label_names.len() != r.num_labels {
                    return invalid("label_names length differs from num_labels".into());
                }
                if !r.attribute_names.is_empty() && r.attribute_names.len() != r.num_attributes {
                    return invalid("attribute_names length differs from num_attributes".into());
                }
                Ok((ConceptSpace::uniform(r.num_attributes, 2)?, LabelSpace::new(r.num_labels)?))
            }
            KnowledgeProgram::ExplicitTable { domain_sizes, rows } => {
                let space = ConceptSpace::new(domain_sizes.clone())?;
                if rows.len() != space.total_size() {
                    return invalid(format!(
                        "explicit table has {} rows, space has {}",
                        rows.len(),
                        space.total_size()
                    ));
                }
                let m = rows.first().map_or(0, Vec::len);
                if let Some(i) = rows.iter().position(|r| r.len() != m) {
                    return invalid(format!("row {i} has {} weights, expected {m}", rows[i].len()));
                }
                Ok((space, LabelSpace::new(m)?))
            }
        }
    }

    /// True when rows can be produced on demand without a stored table.
    pub fn has_row_evaluator(&self) -> bool {
        !matches!(self, KnowledgeProgram::ExplicitTable { .. })
    }

    /// Writes the weight row of concept vector `c` into `out` (length m).
    pub(crate) fn eval_row(&self, c: &[usize], index: usize, out: &mut [f64]) {
        out.fill(0.0);
        match self {
            KnowledgeProgram::DigitSum { .. } => out[c.iter().sum::<usize>()] = 1.0,
            KnowledgeProgram::SumParity { .. } => out[c.iter().sum::<usize>() % 2] = 1.0,
            KnowledgeProgram::ActiveCount { .. } => out[c.iter().sum::<usize>()] = 1.0,
            KnowledgeProgram::MajorityVote { values, priority, conflict, .. } => {
                let mut counts = vec![0usize; *values];
                for &v in c {
                    counts[v] += 1;
                }
                if let Some(rule) = conflict {
                    let tie = counts[rule.first] == counts[rule.second];
                    let dominant = (0..*values)
                        .filter(|&v| v != rule.first && v != rule.second)
                        .all(|v| counts[rule.first] >= counts[v]);
                    if tie && dominant {
                        out[*values] = 1.0;
                        return;
                    }
                }
                let best = counts.iter().copied().max().unwrap_or(0);
                let winner = priority.iter().copied().find(|&v| counts[v] == best);
                out[winner.expect("priority covers every value")] = 1.0;
            }
            KnowledgeProgram::AttributeRules(r) => {
                let mut hit = vec![false; r.num_labels];
                for rule in r.rules.iter().filter(|rule| rule.fires(c)) {
                    rule.labels.iter().for_each(|&y| hit[y] = true);
                }
                if !hit.iter().any(|&h| h) && r.unmatched == UnmatchedPolicy::UniformOverCompatible
                {
                    for rule in r.rules.iter().filter(|rule| rule.compatible(c)) {
                        rule.labels.iter().for_each(|&y| hit[y] = true);
                    }
                }
                let n = hit.iter().filter(|&&h| h).count();
                if n > 0 {
                    let w = 1.0 / n as f64;
                    for (o, h) in out.iter_mut().zip(hit) {
                        if h {
                            *o = w;
                        }
                    }
                }
            }
            KnowledgeProgram::ExplicitTable { rows, .. } => out.copy_from_slice(&rows[index]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_priority_must_be_permutation() {
        let p = KnowledgeProgram::MajorityVote {
            k: 3,
            values: 3,
            priority: vec![0, 0, 2],
            conflict: None,
        };
        assert!(matches!(p.spaces(), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn review_majority_cases() {
        let p = KnowledgeProgram::review_majority();
        let (_, labels) = p.spaces().unwrap();
        assert_eq!(labels.num_labels(), 5);
        let mut row = vec![0.0; 5];
        let winner = |c: &[usize], row: &mut Vec<f64>| {
            p.eval_row(c, 0, row);
            row.iter().position(|&w| w == 1.0).unwrap()
        };
        // 2 pos, 2 neg, 1 neutral: conflict
        assert_eq!(winner(&[0, 0, 1, 1, 2], &mut row), 4);
        // 2 pos, 2 neu, 1 neg: positive wins the tie by priority
        assert_eq!(winner(&[0, 2, 0, 2, 1], &mut row), 0);
        // 2 neu, 2 unk, 1 pos: neutral outranks unknown
        assert_eq!(winner(&[2, 3, 2, 3, 0], &mut row), 2);
        // 1 pos, 1 neg, 3 neu: neutral majority, no conflict
        assert_eq!(winner(&[0, 1, 2, 2, 2], &mut row), 2);
        assert_eq!(winner(&[3, 3, 3, 3, 3], &mut row), 3);
    }

    #[test]
    fn attribute_rules_validation() {
        let mut r = AttributeRules::cifar10();
        assert!(KnowledgeProgram::AttributeRules(r.clone()).spaces().is_ok());
        r.rules[0].labels.push(10);
        assert!(KnowledgeProgram::AttributeRules(r).spaces().is_err());
    }

    #[test]
    fn program_config_round_trip() {
        let p = KnowledgeProgram::DigitSum { k: 2, base: 10 };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"program":"digit-sum","k":2,"base":10}"#);
        assert_eq!(serde_json::from_str::<KnowledgeProgram>(&s).unwrap(), p);
    }
}
