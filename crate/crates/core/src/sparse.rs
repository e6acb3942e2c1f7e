//! Sparse term-weight vectors.
//!
//! A [`SparseVec`] stores parallel arrays of strictly increasing term ids and
//! strictly positive, finite weights. Zeros are never stored: an absent term is
//! an inactive term, which is what the FLOPS statistics count.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type TermId = u32;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(TermId, f64)>", into = "Vec<(TermId, f64)>")]
pub struct SparseVec {
    terms: Vec<TermId>,
    weights: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops exact zeros from a dense vector, keeping term order.
    ///
    /// Fails on negative or non-finite entries.
    pub fn prune(dense: &[f64]) -> Result<Self> {
        let mut out = Self::default();
        for (j, &w) in dense.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(alloc::format!("entry {j} is {w}, expected finite and >= 0")));
            }
            if w > 0.0 {
                out.terms.push(j as TermId);
                out.weights.push(w);
            }
        }
        Ok(out)
    }

    /// Builds from `(term, weight)` pairs, which must already be strictly
    /// increasing in term. Zero weights are pruned.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (TermId, f64)>,
    {
        let mut out = Self::default();
        for (t, w) in pairs {
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(alloc::format!("weight for term {t} is {w}")));
            }
            if let Some(&last) = out.terms.last() {
                if t <= last {
                    return Err(invalid(alloc::format!("term ids not strictly increasing at {t}")));
                }
            }
            if w > 0.0 {
                out.terms.push(t);
                out.weights.push(w);
            }
        }
        Ok(out)
    }

    /// Like [`SparseVec::from_pairs`] but sorts first; duplicate terms are rejected.
    pub fn from_unsorted(mut pairs: Vec<(TermId, f64)>) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        Self::from_pairs(pairs)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, f64)> + '_ {
        self.terms.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn get(&self, term: TermId) -> Option<f64> {
        self.terms.binary_search(&term).ok().map(|i| self.weights[i])
    }

    /// Dense copy of length `dim`; terms beyond `dim` are dropped.
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; dim];
        for (t, w) in self.iter() {
            if (t as usize) < dim {
                out[t as usize] = w;
            }
        }
        out
    }

    /// Largest term id plus one, or 0 when empty.
    pub fn dim_hint(&self) -> usize {
        self.terms.last().map_or(0, |&t| t as usize + 1)
    }

    /// Merge-join dot product, accumulated in ascending term order.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        dot(self, other)
    }
}

/// `Σ_j a_j b_j` over shared terms. Accumulation runs in ascending term order
/// starting from `0.0`, which the inverted index reproduces exactly.
pub fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < a.terms.len() && j < b.terms.len() {
        match a.terms[i].cmp(&b.terms[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                acc += a.weights[i] * b.weights[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

impl TryFrom<Vec<(TermId, f64)>> for SparseVec {
    type Error = crate::Error;

    fn try_from(pairs: Vec<(TermId, f64)>) -> Result<Self> {
        Self::from_pairs(pairs)
    }
}

impl From<SparseVec> for Vec<(TermId, f64)> {
    fn from(v: SparseVec) -> Self {
        v.iter().collect()
    }
}
