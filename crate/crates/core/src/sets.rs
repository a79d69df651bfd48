//! Label sets and concept-vector sets.
//!
//! Label sets are bitsets over a fixed label universe. Concept sets are kept
//! either as a lazy Cartesian product of per-concept value sets or as an
//! explicit sorted list of mixed-radix indices.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::knowledge::ConceptSpace;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelSet {
    bits: FixedBitSet,
}

impl LabelSet {
    pub fn empty(num_labels: usize) -> Self {
        Self { bits: FixedBitSet::with_capacity(num_labels) }
    }

    pub fn full(num_labels: usize) -> Self {
        let mut bits = FixedBitSet::with_capacity(num_labels);
        bits.insert_range(..);
        Self { bits }
    }

    pub fn from_labels(num_labels: usize, labels: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(num_labels);
        for y in labels {
            s.insert(y);
        }
        s
    }

    /// Number of labels in the universe, not the set size.
    pub fn universe(&self) -> usize {
        self.bits.len()
    }

    pub fn insert(&mut self, y: usize) {
        self.bits.insert(y);
    }

    pub fn contains(&self, y: usize) -> bool {
        self.bits.contains(y)
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn intersection(&self, other: &LabelSet) -> LabelSet {
        let mut bits = self.bits.clone();
        bits.intersect_with(&other.bits);
        LabelSet { bits }
    }

    pub fn union_with(&mut self, other: &LabelSet) {
        self.bits.union_with(&other.bits);
    }

    pub fn intersects(&self, other: &LabelSet) -> bool {
        !self.bits.is_disjoint(&other.bits)
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.bits.is_subset(&other.bits)
    }

    /// True when any of `labels` is a member.
    pub fn intersects_slice(&self, labels: &[usize]) -> bool {
        labels.iter().any(|&y| self.bits.contains(y))
    }
}

impl std::fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Serialize, Deserialize)]
struct LabelSetRepr {
    universe: usize,
    members: Vec<usize>,
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LabelSetRepr { universe: self.universe(), members: self.to_vec() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = LabelSetRepr::deserialize(d)?;
        if let Some(&y) = repr.members.iter().find(|&&y| y >= repr.universe) {
            return Err(serde::de::Error::custom(format!(
                "label {y} outside universe of {}",
                repr.universe
            )));
        }
        Ok(LabelSet::from_labels(repr.universe, repr.members))
    }
}

/// A set of concept vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptSet {
    /// Cartesian product of per-concept value sets, each sorted ascending.
    Product(Vec<Vec<usize>>),
    /// Sorted, deduplicated concept-vector indices.
    Explicit(Vec<usize>),
}

impl ConceptSet {
    pub fn empty() -> Self {
        ConceptSet::Explicit(Vec::new())
    }

    pub fn full(space: &ConceptSpace) -> Self {
        ConceptSet::Product(space.domain_sizes().iter().map(|&d| (0..d).collect()).collect())
    }

    pub fn product(mut factors: Vec<Vec<usize>>) -> Self {
        for f in &mut factors {
            f.sort_unstable();
            f.dedup();
        }
        ConceptSet::Product(factors)
    }

    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        ConceptSet::Explicit(indices)
    }

    /// Cardinality; products report `prod |factor|` without enumeration.
    pub fn len(&self) -> u128 {
        match self {
            ConceptSet::Product(fs) => fs.iter().map(|f| f.len() as u128).product(),
            ConceptSet::Explicit(v) => v.len() as u128,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ConceptSet::Product(fs) => fs.iter().any(|f| f.is_empty()),
            ConceptSet::Explicit(v) => v.is_empty(),
        }
    }

    pub fn contains(&self, space: &ConceptSpace, c: &[usize]) -> bool {
        match self {
            ConceptSet::Product(fs) => {
                fs.len() == c.len() && fs.iter().zip(c).all(|(f, v)| f.binary_search(v).is_ok())
            }
            ConceptSet::Explicit(v) => {
                space.contains(c) && v.binary_search(&space.index_of(c)).is_ok()
            }
        }
    }

    pub fn contains_index(&self, space: &ConceptSpace, index: usize) -> bool {
        match self {
            ConceptSet::Product(_) => self.contains(space, &space.vector_of(index)),
            ConceptSet::Explicit(v) => v.binary_search(&index).is_ok(),
        }
    }

    /// Visits every member index in ascending order. Fails up front when the
    /// set is larger than `cap`.
    pub fn try_for_each_index(
        &self,
        space: &ConceptSpace,
        cap: usize,
        mut f: impl FnMut(usize),
    ) -> Result<()> {
        let n = self.len();
        if n > cap as u128 {
            return Err(Error::cap(n, cap));
        }
        match self {
            ConceptSet::Explicit(v) => v.iter().for_each(|&i| f(i)),
            ConceptSet::Product(fs) => {
                if fs.len() != space.k() {
                    return Err(Error::InvalidArgument(format!(
                        "product set has {} factors, space has {}",
                        fs.len(),
                        space.k()
                    )));
                }
                if self.is_empty() {
                    return Ok(());
                }
                let k = fs.len();
                let mut pos = vec![0usize; k];
                loop {
                    let idx = pos
                        .iter()
                        .zip(fs)
                        .zip(space.domain_sizes())
                        .fold(0, |acc, ((&p, f), &d)| acc * d + f[p]);
                    f(idx);
                    let mut j = k;
                    loop {
                        if j == 0 {
                            return Ok(());
                        }
                        j -= 1;
                        pos[j] += 1;
                        if pos[j] < fs[j].len() {
                            break;
                        }
                        pos[j] = 0;
                    }
                }
            }
        }
        Ok(())
    }

    /// Explicit sorted member indices, subject to `cap`.
    pub fn materialize(&self, space: &ConceptSpace, cap: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.len().min(cap as u128) as usize);
        self.try_for_each_index(space, cap, |i| out.push(i))?;
        Ok(out)
    }

    pub fn to_explicit(&self, space: &ConceptSpace, cap: usize) -> Result<ConceptSet> {
        Ok(ConceptSet::Explicit(self.materialize(space, cap)?))
    }

    pub fn is_subset(&self, other: &ConceptSet, space: &ConceptSpace, cap: usize) -> Result<bool> {
        let mut ok = true;
        self.try_for_each_index(space, cap, |i| {
            if ok && !other.contains_index(space, i) {
                ok = false;
            }
        })?;
        Ok(ok)
    }
}
