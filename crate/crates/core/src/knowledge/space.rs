use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite concept space: the Cartesian product of per-concept value domains.
///
/// Concept vectors are indexed in mixed radix with the first concept as the
/// most significant digit, so `(7, 5)` over two base-10 digits has index 75.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ConceptSpace {
    domain_sizes: Vec<usize>,
    total_size: usize,
}

impl ConceptSpace {
    pub fn new(domain_sizes: Vec<usize>) -> Result<Self> {
        if domain_sizes.is_empty() {
            return Err(Error::InvalidArgument("concept space needs k >= 1 concepts".into()));
        }
        if let Some(j) = domain_sizes.iter().position(|&v| v == 0) {
            return Err(Error::InvalidArgument(format!("concept {j} has an empty domain")));
        }
        let total_size = domain_sizes
            .iter()
            .try_fold(1usize, |acc, &v| acc.checked_mul(v))
            .ok_or_else(|| Error::InvalidArgument("concept space size overflows usize".into()))?;
        Ok(Self { domain_sizes, total_size })
    }

    pub fn uniform(k: usize, values: usize) -> Result<Self> {
        Self::new(vec![values; k])
    }

    pub fn k(&self) -> usize {
        self.domain_sizes.len()
    }

    pub fn domain_sizes(&self) -> &[usize] {
        &self.domain_sizes
    }

    pub fn domain_size(&self, j: usize) -> usize {
        self.domain_sizes[j]
    }

    pub fn total_size(&self) -> usize {
        self.total_size
    }

    /// Fails with `CapExceeded` when the whole space is larger than `cap`.
    pub fn check_cap(&self, cap: usize) -> Result<()> {
        if self.total_size > cap {
            Err(Error::cap(self.total_size as u128, cap))
        } else {
            Ok(())
        }
    }

    pub fn contains(&self, c: &[usize]) -> bool {
        c.len() == self.k() && c.iter().zip(&self.domain_sizes).all(|(&v, &d)| v < d)
    }

    pub fn validate(&self, c: &[usize]) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "concept vector {c:?} is outside the space {:?}",
                self.domain_sizes
            )))
        }
    }

    /// Mixed-radix index of `c`. `c` must lie in the space.
    pub fn index_of(&self, c: &[usize]) -> usize {
        debug_assert!(self.contains(c), "{c:?} not in {:?}", self.domain_sizes);
        c.iter()
            .zip(&self.domain_sizes)
            .fold(0, |acc, (&v, &d)| acc * d + v)
    }

    pub fn vector_of(&self, mut index: usize) -> ConceptVector {
        debug_assert!(index < self.total_size);
        let mut out = vec![0; self.k()];
        for (slot, &d) in out.iter_mut().zip(&self.domain_sizes).rev() {
            *slot = index % d;
            index /= d;
        }
        ConceptVector(out)
    }

    /// Writes the decoded vector of `index` into `buf` without allocating.
    pub fn decode_into(&self, mut index: usize, buf: &mut [usize]) {
        for (slot, &d) in buf.iter_mut().zip(&self.domain_sizes).rev() {
            *slot = index % d;
            index /= d;
        }
    }

    /// Iterates all concept vectors in index order, reusing one buffer.
    pub fn for_each_vector(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut buf = vec![0usize; self.k()];
        for index in 0..self.total_size {
            f(index, &buf);
            // odometer increment, last concept fastest
            for j in (0..buf.len()).rev() {
                buf[j] += 1;
                if buf[j] < self.domain_sizes[j] {
                    break;
                }
                buf[j] = 0;
            }
        }
    }
}

impl TryFrom<Vec<usize>> for ConceptSpace {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConceptSpace> for Vec<usize> {
    fn from(s: ConceptSpace) -> Self {
        s.domain_sizes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct LabelSpace {
    num_labels: usize,
}

impl LabelSpace {
    pub fn new(num_labels: usize) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::InvalidArgument("label space needs at least one label".into()));
        }
        Ok(Self { num_labels })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }
}

impl TryFrom<usize> for LabelSpace {
    type Error = Error;
    fn try_from(m: usize) -> Result<Self> {
        Self::new(m)
    }
}

impl From<LabelSpace> for usize {
    fn from(s: LabelSpace) -> Self {
        s.num_labels
    }
}

/// A concrete assignment `(c_1, ..., c_k)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptVector(pub Vec<usize>);

impl Deref for ConceptVector {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for ConceptVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl fmt::Display for ConceptVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_radix_round_trip() {
        let s = ConceptSpace::new(vec![3, 4, 2]).unwrap();
        assert_eq!(s.total_size(), 24);
        let mut seen = 0;
        s.for_each_vector(|i, c| {
            assert_eq!(s.index_of(c), i);
            assert_eq!(s.vector_of(i).0, c);
            seen += 1;
        });
        assert_eq!(seen, 24);
    }

    #[test]
    fn digit_pair_index() {
        let s = ConceptSpace::uniform(2, 10).unwrap();
        assert_eq!(s.index_of(&[7, 5]), 75);
    }

    #[test]
    fn rejects_degenerate_spaces() {
        assert!(ConceptSpace::new(vec![]).is_err());
        assert!(ConceptSpace::new(vec![3, 0]).is_err());
        assert!(ConceptSpace::new(vec![usize::MAX, 3]).is_err());
        assert!(LabelSpace::new(0).is_err());
    }

    #[test]
    fn cap_check() {
        let s = ConceptSpace::uniform(4, 10).unwrap();
        assert!(s.check_cap(10_000).is_ok());
        assert!(matches!(s.check_cap(9_999), Err(Error::CapExceeded { .. })));
    }
}
