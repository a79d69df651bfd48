//! Inference-time evaluation of propositional formulas under t-(co)norm
//! semantics.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuzzyFamily {
    Godel,
    Product,
    Lukasiewicz,
}

impl FuzzyFamily {
    pub fn t_norm(self, a: f64, b: f64) -> f64 {
        match self {
            FuzzyFamily::Godel => a.min(b),
            FuzzyFamily::Product => a * b,
            FuzzyFamily::Lukasiewicz => (a + b - 1.0).max(0.0),
        }
    }

    pub fn t_conorm(self, a: f64, b: f64) -> f64 {
        match self {
            FuzzyFamily::Godel => a.max(b),
            FuzzyFamily::Product => a + b - a * b,
            FuzzyFamily::Lukasiewicz => (a + b).min(1.0),
        }
    }

    pub fn negation(self, a: f64) -> f64 {
        match self {
            FuzzyFamily::Godel => {
                if a == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            FuzzyFamily::Product | FuzzyFamily::Lukasiewicz => 1.0 - a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Var(usize),
    Const(f64),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    /// `S(N(a), b)`
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn var(i: usize) -> Self {
        Formula::Var(i)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(fs: impl IntoIterator<Item = Formula>) -> Self {
        Formula::And(fs.into_iter().collect())
    }

    pub fn or(fs: impl IntoIterator<Item = Formula>) -> Self {
        Formula::Or(fs.into_iter().collect())
    }
}

/// Satisfaction degree of `formula` given truth values in `[0, 1]`.
/// Empty conjunctions are 1 and empty disjunctions 0.
pub fn fuzzy_satisfaction(truth: &[f64], formula: &Formula, family: FuzzyFamily) -> f64 {
    match formula {
        Formula::Var(i) => truth[*i],
        Formula::Const(v) => *v,
        Formula::Not(f) => family.negation(fuzzy_satisfaction(truth, f, family)),
        Formula::And(fs) => fs
            .iter()
            .fold(1.0, |acc, f| family.t_norm(acc, fuzzy_satisfaction(truth, f, family))),
        Formula::Or(fs) => fs
            .iter()
            .fold(0.0, |acc, f| family.t_conorm(acc, fuzzy_satisfaction(truth, f, family))),
        Formula::Implies(a, b) => family.t_conorm(
            family.negation(fuzzy_satisfaction(truth, a, family)),
            fuzzy_satisfaction(truth, b, family),
        ),
    }
}
