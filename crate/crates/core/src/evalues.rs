//! Conformal e-prediction with soft-rank e-variables.
//!
//! For a calibration score sum `S` over `n` records and a test score `s`, the
//! soft-rank e-value is `(n+1) s / (S + s)`. A candidate is kept when its
//! e-value is strictly below `1/level`. Concept tuples aggregate per-concept
//! e-values by their mean (valid by linearity) or their product (valid only
//! under conditional independence of the per-concept e-values, which a shared
//! test input breaks).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{score, CalibrationScores, FactorizedConceptDistribution};
use crate::error::{Error, Result};
use crate::sets::{ConceptSet, LabelSet};

pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.10, 0.15, 0.20, 0.25, 0.30];
pub const DEFAULT_BETA_GRID: [f64; 7] = [0.10, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    #[serde(alias = "average")]
    Avg,
    Product,
}

/// Errors with `DegenerateScores` when both the sum and the test score are 0.
pub fn try_soft_rank_evalue(test_score: f64, score_sum: f64, n: usize) -> Result<f64> {
    let denom = score_sum + test_score;
    if denom == 0.0 {
        return Err(Error::DegenerateScores);
    }
    Ok((n as f64 + 1.0) * test_score / denom)
}

/// Soft-rank e-value; the degenerate all-zero case is 0.
pub fn soft_rank_evalue(test_score: f64, score_sum: f64, n: usize) -> f64 {
    try_soft_rank_evalue(test_score, score_sum, n).unwrap_or(0.0)
}

pub fn aggregate(e_values: &[f64], mode: Aggregation) -> f64 {
    match mode {
        Aggregation::Avg => e_values.iter().fold(0.0, |a, &e| a + e) / e_values.len() as f64,
        Aggregation::Product => e_values.iter().fold(1.0, |a, &e| a * e),
    }
}

fn threshold(level: f64) -> Result<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(1.0 / level)
    } else {
        Err(Error::InvalidArgument(format!("miscoverage level {level} not in (0, 1)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EValueCalibration {
    pub n: usize,
    pub label_score_sum: f64,
    pub concept_score_sums: Vec<f64>,
}

impl EValueCalibration {
    pub fn fit(scores: &CalibrationScores) -> Result<Self> {
        if scores.n() == 0 {
            return Err(Error::EmptyCalibration);
        }
        let k = scores.num_concepts();
        let mut concept_score_sums = vec![0.0; k];
        for row in &scores.concepts {
            for (s, x) in concept_score_sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        let out = Self {
            n: scores.n(),
            label_score_sum: scores.label.iter().sum(),
            concept_score_sums,
        };
        if !out.label_score_sum.is_finite() || out.concept_score_sums.iter().any(|s| !s.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite calibration score sum".into()));
        }
        Ok(out)
    }

    pub fn label_evalues(&self, label_probs: &[f64]) -> Vec<f64> {
        label_probs
            .iter()
            .map(|&p| soft_rank_evalue(score(p).value(), self.label_score_sum, self.n))
            .collect()
    }

    /// `out[j][v]` is the e-value of value `v` for concept `j`.
    pub fn concept_evalues(&self, p: &FactorizedConceptDistribution) -> Vec<Vec<f64>> {
        p.factors()
            .iter()
            .zip(&self.concept_score_sums)
            .map(|(pj, &s)| pj.iter().map(|&x| soft_rank_evalue(score(x).value(), s, self.n)).collect())
            .collect()
    }
}

/// `{ y : E(x, y) < 1/level }`
pub fn evalue_label_set(label_probs: &[f64], cal: &EValueCalibration, level: f64) -> Result<LabelSet> {
    let t = threshold(level)?;
    let e = cal.label_evalues(label_probs);
    Ok(LabelSet::from_labels(e.len(), e.iter().enumerate().filter(|(_, &x)| x < t).map(|(y, _)| y)))
}

/// `{ v : aggregate(E_j(x, v_j)) < 1/level }`, enumerated with pruning.
pub fn evalue_concept_set(
    p: &FactorizedConceptDistribution,
    cal: &EValueCalibration,
    level: f64,
    mode: Aggregation,
    cap: usize,
) -> Result<ConceptSet> {
    if cal.concept_score_sums.len() != p.k() {
        return Err(Error::InvalidArgument(format!(
            "calibration has {} concepts, distribution has {}",
            cal.concept_score_sums.len(),
            p.k()
        )));
    }
    let t = threshold(level)?;
    let evals = cal.concept_evalues(p);
    let mut out = Vec::new();
    let mut overflow = false;
    TupleSearch::new(&evals, t, mode).run(|idx| {
        if out.len() == cap {
            overflow = true;
            return false;
        }
        out.push(idx);
        true
    });
    if overflow {
        return Err(Error::cap(cap as u128 + 1, cap));
    }
    Ok(ConceptSet::Explicit(out))
}

/// Number of tuples `evalue_concept_set` would return, without storing them.
pub fn evalue_concept_set_size(evals: &[Vec<f64>], level: f64, mode: Aggregation) -> Result<u128> {
    let t = threshold(level)?;
    let mut n = 0u128;
    TupleSearch::new(evals, t, mode).run(|_| {
        n += 1;
        true
    });
    Ok(n)
}

/// Depth-first search over tuples with a lower bound on the aggregate.
struct TupleSearch<'a> {
    evals: &'a [Vec<f64>],
    threshold: f64,
    mode: Aggregation,
    // min_rest[j]: best achievable contribution of concepts j.. (sum or product)
    min_rest: Vec<f64>,
}

impl<'a> TupleSearch<'a> {
    fn new(evals: &'a [Vec<f64>], threshold: f64, mode: Aggregation) -> Self {
        let k = evals.len();
        let (unit, combine): (f64, fn(f64, f64) -> f64) = match mode {
            Aggregation::Avg => (0.0, |a, b| a + b),
            Aggregation::Product => (1.0, |a, b| a * b),
        };
        let mut min_rest = vec![unit; k + 1];
        for j in (0..k).rev() {
            let m = evals[j].iter().copied().fold(f64::INFINITY, f64::min);
            min_rest[j] = combine(m, min_rest[j + 1]);
        }
        Self { evals, threshold, mode, min_rest }
    }

    fn run(&self, mut visit: impl FnMut(usize) -> bool) {
        let init = match self.mode {
            Aggregation::Avg => 0.0,
            Aggregation::Product => 1.0,
        };
        self.dfs(0, 0, init, &mut visit);
    }

    fn dfs(&self, j: usize, index: usize, acc: f64, visit: &mut impl FnMut(usize) -> bool) -> bool {
        let k = self.evals.len();
        if j == k {
            let agg = match self.mode {
                Aggregation::Avg => acc / k as f64,
                Aggregation::Product => acc,
            };
            return if agg < self.threshold { visit(index) } else { true };
        }
        for (v, &e) in self.evals[j].iter().enumerate() {
            let (next, bound) = match self.mode {
                Aggregation::Avg => (acc + e, (acc + e + self.min_rest[j + 1]) / k as f64),
                Aggregation::Product => (acc * e, acc * e * self.min_rest[j + 1]),
            };
            // margin keeps pruning sound against rounding of the bound
            if bound >= self.threshold * (1.0 + 1e-12) + 1e-300 {
                continue;
            }
            if !self.dfs(j + 1, index * self.evals[j].len() + v, next, visit) {
                return false;
            }
        }
        true
    }
}

/// How the two miscoverage levels are chosen per bootstrap iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Each side independently takes its smallest level within budget.
    #[default]
    PerSide,
    /// First `(alpha, beta)` pair in lexicographic grid order meeting both
    /// budgets.
    Lexicographic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub grid_alpha: Vec<f64>,
    pub grid_beta: Vec<f64>,
    pub label_budget: f64,
    pub concept_budget: f64,
    pub iterations: usize,
    pub seed: u64,
    pub mode: Aggregation,
    pub rule: SelectionRule,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            grid_alpha: DEFAULT_ALPHA_GRID.to_vec(),
            grid_beta: DEFAULT_BETA_GRID.to_vec(),
            label_budget: 2.0,
            concept_budget: 5.0,
            iterations: 100,
            seed: 0,
            mode: Aggregation::Avg,
            rule: SelectionRule::PerSide,
        }
    }
}

/// One test input as seen by budget selection.
#[derive(Clone, Debug)]
pub struct BudgetInput<'a> {
    pub label_probs: &'a [f64],
    pub concepts: &'a FactorizedConceptDistribution,
    pub y_star: Option<usize>,
    pub c_star: Option<&'a [usize]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSelection {
    pub alpha: f64,
    pub beta: f64,
    /// Mean raw set sizes on the test inputs at the selected levels.
    pub label_size: f64,
    pub concept_size: f64,
    pub alpha_infeasible: bool,
    pub beta_infeasible: bool,
    pub label_coverage: Option<f64>,
    pub concept_coverage: Option<f64>,
    pub label_score_sum: f64,
    pub concept_score_sums: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSelection {
    pub config: BudgetConfig,
    pub n_calibration: usize,
    pub selections: Vec<IterationSelection>,
    pub mean_alpha: f64,
    pub mean_beta: f64,
    /// `1 - mean(alpha~)` and `1 - mean(beta~)`.
    pub target_label: f64,
    pub target_concept: f64,
    pub infeasible_iterations: usize,
}

impl BudgetSelection {
    /// Calibration state of iteration `t`.
    pub fn calibration(&self, t: usize) -> EValueCalibration {
        let s = &self.selections[t];
        EValueCalibration {
            n: self.n_calibration,
            label_score_sum: s.label_score_sum,
            concept_score_sums: s.concept_score_sums.clone(),
        }
    }
}

fn check_grid(grid: &[f64], what: &str) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} grid is empty")));
    }
    if let Some(x) = grid.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::InvalidArgument(format!("{what} grid value {x} not in (0, 1)")));
    }
    let mut g = grid.to_vec();
    g.sort_unstable_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Bootstrap selection of the smallest miscoverage levels whose mean set
/// sizes on `test` stay within budget. Iteration `t` draws its resample from
/// stream `t` of a generator keyed by `config.seed`.
pub fn budget_select(
    scores: &CalibrationScores,
    test: &[BudgetInput<'_>],
    config: &BudgetConfig,
) -> Result<BudgetSelection> {
    let grid_alpha = check_grid(&config.grid_alpha, "alpha")?;
    let grid_beta = check_grid(&config.grid_beta, "beta")?;
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one iteration".into()));
    }
    if scores.n() == 0 {
        return Err(Error::EmptyCalibration);
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scores.num_concepts() == 0 {
        return Err(Error::MissingInput { method: "budget selection", input: "concept calibration scores" });
    }
    let n = scores.n();
    let k = scores.num_concepts();

    let selections = (0..config.iterations)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut label_sum = 0.0;
            let mut concept_sums = vec![0.0; k];
            for _ in 0..n {
                let i = rng.random_range(0..n);
                label_sum += scores.label[i];
                for (s, x) in concept_sums.iter_mut().zip(&scores.concepts[i]) {
                    *s += x;
                }
            }
            let cal = EValueCalibration { n, label_score_sum: label_sum, concept_score_sums: concept_sums };
            select_iteration(&cal, test, &grid_alpha, &grid_beta, config)
        })
        .collect::<Result<Vec<_>>>()?;

    let t = selections.len() as f64;
    let mean_alpha = selections.iter().map(|s| s.alpha).sum::<f64>() / t;
    let mean_beta = selections.iter().map(|s| s.beta).sum::<f64>() / t;
    let infeasible_iterations =
        selections.iter().filter(|s| s.alpha_infeasible || s.beta_infeasible).count();
    Ok(BudgetSelection {
        config: config.clone(),
        n_calibration: n,
        selections,
        mean_alpha,
        mean_beta,
        target_label: 1.0 - mean_alpha,
        target_concept: 1.0 - mean_beta,
        infeasible_iterations,
    })
}

fn select_iteration(
    cal: &EValueCalibration,
    test: &[BudgetInput<'_>],
    grid_alpha: &[f64],
    grid_beta: &[f64],
    config: &BudgetConfig,
) -> Result<IterationSelection> {
    let m = test.len() as f64;
    let mut label_sizes = vec![0.0; grid_alpha.len()];
    let mut concept_sizes = vec![0.0; grid_beta.len()];
    let mut label_evals = Vec::with_capacity(test.len());
    let mut concept_evals = Vec::with_capacity(test.len());
    for x in test {
        let le = cal.label_evalues(x.label_probs);
        for (size, &a) in label_sizes.iter_mut().zip(grid_alpha) {
            *size += le.iter().filter(|&&e| e < 1.0 / a).count() as f64;
        }
        let ce = cal.concept_evalues(x.concepts);
        for (size, &b) in concept_sizes.iter_mut().zip(grid_beta) {
            *size += evalue_concept_set_size(&ce, b, config.mode)? as f64;
        }
        label_evals.push(le);
        concept_evals.push(ce);
    }
    label_sizes.iter_mut().for_each(|s| *s /= m);
    concept_sizes.iter_mut().for_each(|s| *s /= m);

    let ok_a: Vec<bool> = label_sizes.iter().map(|&s| s <= config.label_budget).collect();
    let ok_b: Vec<bool> = concept_sizes.iter().map(|&s| s <= config.concept_budget).collect();
    let (ia, ib, fa, fb) = match config.rule {
        SelectionRule::PerSide => {
            let ia = ok_a.iter().position(|&ok| ok);
            let ib = ok_b.iter().position(|&ok| ok);
            (
                ia.unwrap_or(grid_alpha.len() - 1),
                ib.unwrap_or(grid_beta.len() - 1),
                ia.is_none(),
                ib.is_none(),
            )
        }
        SelectionRule::Lexicographic => {
            let pair = (0..grid_alpha.len())
                .flat_map(|a| (0..grid_beta.len()).map(move |b| (a, b)))
                .find(|&(a, b)| ok_a[a] && ok_b[b]);
            match pair {
                Some((a, b)) => (a, b, false, false),
                None => (grid_alpha.len() - 1, grid_beta.len() - 1, !ok_a.iter().any(|&x| x), !ok_b.iter().any(|&x| x)),
            }
        }
    };
    let (alpha, beta) = (grid_alpha[ia], grid_beta[ib]);

    let label_coverage = coverage_of(test.iter().zip(&label_evals).map(|(x, le)| {
        x.y_star.map(|y| le[y] < 1.0 / alpha)
    }));
    let concept_coverage = coverage_of(test.iter().zip(&concept_evals).map(|(x, ce)| {
        x.c_star.map(|c| {
            let e: Vec<f64> = c.iter().enumerate().map(|(j, &v)| ce[j][v]).collect();
            aggregate(&e, config.mode) < 1.0 / beta
        })
    }));

    Ok(IterationSelection {
        alpha,
        beta,
        label_size: label_sizes[ia],
        concept_size: concept_sizes[ib],
        alpha_infeasible: fa,
        beta_infeasible: fb,
        label_coverage,
        concept_coverage,
        label_score_sum: cal.label_score_sum,
        concept_score_sums: cal.concept_score_sums.clone(),
    })
}

fn coverage_of(hits: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let mut n = 0usize;
    let mut h = 0usize;
    for hit in hits {
        let hit = hit?;
        n += 1;
        h += hit as usize;
    }
    (n > 0).then(|| h as f64 / n as f64)
}
