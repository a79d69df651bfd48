//! Concept/label spaces, compiled prior knowledge, and the deduction and
//! abduction operators built on it.
//!
//! A [`KnowledgeTable`] maps each concept vector to a weight row over labels.
//! Deduction returns the set-valued argmax of a row; abduction returns every
//! concept vector whose deduction meets a given label set.

mod fuzzy;
mod program;
mod space;

use std::borrow::Cow;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

pub use fuzzy::{fuzzy_satisfaction, Formula, FuzzyFamily};
pub use program::{AttributeRule, AttributeRules, ConflictRule, KnowledgeProgram, UnmatchedPolicy};
pub use space::{ConceptSpace, ConceptVector, LabelSpace};

use crate::conformal::FactorizedConceptDistribution;
use crate::error::{Error, Result};
use crate::sets::{ConceptSet, LabelSet};

/// Default limit on concept vectors in a dense table or enumerated set.
pub const DEFAULT_CAP: usize = 1_000_000;

/// Row-sum tolerance for compiled weights.
pub const WEIGHT_TOL: f64 = 1e-9;

// weights within this distance of the row maximum tie for the argmax
const TIE_TOL: f64 = 1e-12;

/// Compressed list-of-lists.
#[derive(Clone, Debug, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Csr {
    fn get(&self, i: usize) -> &[usize] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Rows {
    Dense {
        weights: Vec<f64>,
        deduced: Csr,
        preimage: Csr,
    },
    Lazy(KnowledgeProgram),
}

/// Compiled prior knowledge: a concept-to-label weight table.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeTable {
    concepts: ConceptSpace,
    labels: LabelSpace,
    cap: usize,
    rows: Rows,
}

/// Empirical soundness gaps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundnessGaps {
    pub delta_ab: f64,
    pub delta_de: f64,
}

fn argmax_set(row: &[f64], out: &mut Vec<usize>) {
    out.clear();
    let max = row.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return;
    }
    out.extend(row.iter().enumerate().filter(|(_, &w)| w >= max - TIE_TOL).map(|(y, _)| y));
}

fn check_row(row: &[f64], index: usize) -> Result<()> {
    if let Some(w) = row.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::InvalidTable(format!("row {index}: weight {w} outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if sum != 0.0 && (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidTable(format!("row {index}: weights sum to {sum}, not 0 or 1")));
    }
    Ok(())
}

impl KnowledgeTable {
    pub fn compile(program: &KnowledgeProgram) -> Result<Self> {
        Self::compile_with_cap(program, DEFAULT_CAP)
    }

    /// Compiles `program` into a dense table, or into a lazily evaluated one
    /// when the concept space exceeds `cap` and the program has a row rule.
    pub fn compile_with_cap(program: &KnowledgeProgram, cap: usize) -> Result<Self> {
        let (concepts, labels) = program.spaces()?;
        let total = concepts.total_size();
        if total > cap {
            if !program.has_row_evaluator() {
                return Err(Error::cap(total as u128, cap));
            }
            return Ok(Self { concepts, labels, cap, rows: Rows::Lazy(program.clone()) });
        }

        let m = labels.num_labels();
        let mut weights = vec![0.0; total * m];
        let mut deduced = Csr { offsets: Vec::with_capacity(total + 1), items: Vec::new() };
        deduced.offsets.push(0);
        let mut buf = Vec::new();
        let mut err = None;
        concepts.for_each_vector(|i, c| {
            let row = &mut weights[i * m..(i + 1) * m];
            program.eval_row(c, i, row);
            if err.is_none() {
                err = check_row(row, i).err();
            }
            argmax_set(row, &mut buf);
            deduced.items.extend_from_slice(&buf);
            deduced.offsets.push(deduced.items.len());
        });
        if let Some(e) = err {
            return Err(e);
        }

        // invert the deduction lists into per-label preimages
        let mut counts = vec![0usize; m + 1];
        for &y in &deduced.items {
            counts[y + 1] += 1;
        }
        for y in 0..m {
            counts[y + 1] += counts[y];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; deduced.items.len()];
        for i in 0..total {
            for &y in deduced.get(i) {
                items[fill[y]] = i;
                fill[y] += 1;
            }
        }
        let preimage = Csr { offsets: counts, items };

        Ok(Self { concepts, labels, cap, rows: Rows::Dense { weights, deduced, preimage } })
    }

    /// Reads an explicit table: one line per concept vector in mixed-radix
    /// order, whitespace-separated label weights. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_text(domain_sizes: Vec<usize>, reader: impl BufRead, cap: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let row = t
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| Error::Parse {
                        line: n + 1,
                        message: format!("bad weight `{tok}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::compile_with_cap(&KnowledgeProgram::ExplicitTable { domain_sizes, rows }, cap)
    }

    pub fn concept_space(&self) -> &ConceptSpace {
        &self.concepts
    }

    pub fn label_space(&self) -> LabelSpace {
        self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.num_labels()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.rows, Rows::Dense { .. })
    }

    /// Weight row of the concept vector with mixed-radix index `index`.
    pub fn row(&self, index: usize) -> Cow<'_, [f64]> {
        let m = self.num_labels();
        match &self.rows {
            Rows::Dense { weights, .. } => Cow::Borrowed(&weights[index * m..(index + 1) * m]),
            Rows::Lazy(p) => {
                let mut out = vec![0.0; m];
                p.eval_row(&self.concepts.vector_of(index), index, &mut out);
                Cow::Owned(out)
            }
        }
    }

    /// Argmax labels of the row at `index`, ascending.
    pub fn deduced(&self, index: usize) -> Cow<'_, [usize]> {
        match &self.rows {
            Rows::Dense { deduced, .. } => Cow::Borrowed(deduced.get(index)),
            Rows::Lazy(_) => {
                let mut out = Vec::new();
                argmax_set(&self.row(index), &mut out);
                Cow::Owned(out)
            }
        }
    }

    /// Set-valued argmax of the row of `c`; empty for an all-zero row.
    pub fn deduce(&self, c: &[usize]) -> LabelSet {
        assert!(self.concepts.contains(c), "concept vector {c:?} outside the concept space");
        self.deduce_index(self.concepts.index_of(c))
    }

    pub fn deduce_index(&self, index: usize) -> LabelSet {
        LabelSet::from_labels(self.num_labels(), self.deduced(index).iter().copied())
    }

    /// True when the deduction of `index` meets `labels`, i.e. the concept
    /// vector belongs to `abduce(labels)`.
    pub fn entails_any(&self, index: usize, labels: &LabelSet) -> bool {
        labels.intersects_slice(&self.deduced(index))
    }

    /// All concept vectors whose deduction meets `labels`.
    pub fn abduce(&self, labels: &LabelSet) -> Result<ConceptSet> {
        match &self.rows {
            Rows::Dense { preimage, .. } => {
                let total: usize = labels.iter().map(|y| preimage.get(y).len()).sum();
                let mut out = Vec::with_capacity(total);
                for y in labels.iter() {
                    out.extend_from_slice(preimage.get(y));
                }
                out.sort_unstable();
                out.dedup();
                if out.len() > self.cap {
                    return Err(Error::cap(out.len() as u128, self.cap));
                }
                Ok(ConceptSet::Explicit(out))
            }
            Rows::Lazy(_) => {
                if labels.is_empty() {
                    return Ok(ConceptSet::empty());
                }
                Err(Error::cap(self.concepts.total_size() as u128, self.cap))
            }
        }
    }

    /// Union of deductions over `concepts`.
    pub fn deduce_image(&self, concepts: &ConceptSet) -> Result<LabelSet> {
        let mut out = LabelSet::empty(self.num_labels());
        concepts.try_for_each_index(&self.concepts, self.cap, |i| {
            for &y in self.deduced(i).iter() {
                out.insert(y);
            }
        })?;
        Ok(out)
    }

    /// Exact `p(y|x) = sum_c p(c|x) W[c, y]` by enumeration of the concept space.
    pub fn marginal_label_distribution(&self, p: &FactorizedConceptDistribution) -> Result<Vec<f64>> {
        if p.domain_sizes() != self.concepts.domain_sizes() {
            return Err(Error::InvalidArgument(format!(
                "distribution domains {:?} differ from knowledge domains {:?}",
                p.domain_sizes(),
                self.concepts.domain_sizes()
            )));
        }
        self.concepts.check_cap(self.cap)?;
        let mut out = vec![0.0; self.num_labels()];
        self.accumulate(p.factors(), 0, 0, 1.0, &mut out);
        Ok(out)
    }

    fn accumulate(&self, factors: &[Vec<f64>], j: usize, index: usize, mass: f64, out: &mut [f64]) {
        if j == factors.len() {
            for (o, w) in out.iter_mut().zip(self.row(index).iter()) {
                *o += mass * w;
            }
            return;
        }
        let d = factors[j].len();
        for (v, &pv) in factors[j].iter().enumerate() {
            if pv > 0.0 {
                self.accumulate(factors, j + 1, index * d + v, mass * pv, out);
            }
        }
    }

    /// `delta_ab`: fraction of records with `c* in abduce({y*})`.
    /// `delta_de`: mean deduction success, where a tie set containing `y*`
    /// scores `1/|ties|`.
    pub fn estimate_deltas<'a>(
        &self,
        records: impl IntoIterator<Item = (&'a [usize], usize)>,
    ) -> Result<SoundnessGaps> {
        let (mut n, mut ab, mut de) = (0usize, 0.0, 0.0);
        for (c_star, y_star) in records {
            self.concepts.validate(c_star)?;
            let ties = self.deduced(self.concepts.index_of(c_star));
            if ties.contains(&y_star) {
                ab += 1.0;
                de += 1.0 / ties.len() as f64;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(SoundnessGaps { delta_ab: ab / n as f64, delta_de: de / n as f64 })
    }
}
