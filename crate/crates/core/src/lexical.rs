//! Okapi BM25 over input tokens, and score-sum fusion of two runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math;
use crate::types::{rank_top_k, Collection, RunList, ScoredDoc, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(invalid("BM25 k1 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(invalid("BM25 b must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Term statistics and postings for BM25 scoring.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_len: Vec<f64>,
    avgdl: f64,
    /// token → (doc ordinal, term frequency), ascending ordinal
    postings: BTreeMap<TokenId, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(corpus: &Collection, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        let mut postings: BTreeMap<TokenId, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        for (ord, doc) in corpus.iter().enumerate() {
            let mut tf: BTreeMap<TokenId, u32> = BTreeMap::new();
            for &t in &doc.tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((ord as u32, c));
            }
            doc_len.push(doc.tokens.len() as f64);
        }
        let avgdl = if doc_len.is_empty() { 0.0 } else { doc_len.iter().sum::<f64>() / doc_len.len() as f64 };
        Ok(Self {
            params,
            doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
            doc_len,
            avgdl,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_freq(&self, token: TokenId) -> usize {
        self.postings.get(&token).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, token: TokenId) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = self.doc_freq(token) as f64;
        math::ln(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    fn term_weight(&self, idf: f64, tf: f64, len: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / self.avgdl))
    }

    /// Score of one document ordinal, by direct evaluation.
    pub fn score_doc(&self, query: &[TokenId], ordinal: usize) -> f64 {
        let unique: BTreeSet<TokenId> = query.iter().copied().collect();
        let mut s = 0.0;
        for t in unique {
            let Some(list) = self.postings.get(&t) else { continue };
            if let Ok(i) = list.binary_search_by_key(&(ordinal as u32), |p| p.0) {
                s += self.term_weight(self.idf(t), list[i].1 as f64, self.doc_len[ordinal]);
            }
        }
        s
    }

    /// Exact top-`k`. Repeated query tokens count once.
    pub fn retrieve(&self, query: &[TokenId], k: usize) -> Vec<ScoredDoc> {
        if k == 0 || self.doc_ids.is_empty() {
            return Vec::new();
        }
        let unique: BTreeSet<TokenId> = query.iter().copied().collect();
        let mut acc = vec![0.0f64; self.doc_ids.len()];
        let mut hit = vec![false; self.doc_ids.len()];
        for t in unique {
            let Some(list) = self.postings.get(&t) else { continue };
            let idf = self.idf(t);
            for &(d, tf) in list {
                acc[d as usize] += self.term_weight(idf, tf as f64, self.doc_len[d as usize]);
                hit[d as usize] = true;
            }
        }
        let hits = (0..self.doc_ids.len())
            .filter(|&d| hit[d] && acc[d] > 0.0)
            .map(|d| ScoredDoc { doc_id: self.doc_ids[d].clone(), score: acc[d] })
            .collect();
        rank_top_k(hits, k)
    }

    pub fn run(&self, queries: &Collection, k: usize) -> RunList {
        let mut run = RunList::new();
        for q in queries {
            run.insert(q.id.clone(), self.retrieve(&q.tokens, k)).expect("BM25 rankings are valid");
        }
        run
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub run: RunList,
    /// Queries found in only one of the two inputs.
    pub one_sided: usize,
}

/// Per-query min-max rescaling to `[0, 1]`; constant rankings map to 1.
pub fn min_max_normalize(run: &RunList) -> RunList {
    let mut out = RunList::new();
    for (q, docs) in run.iter() {
        let lo = docs.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
        let hi = docs.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
        let scaled = docs
            .iter()
            .map(|d| {
                let s = if hi > lo { (d.score - lo) / (hi - lo) } else { 1.0 };
                ScoredDoc { doc_id: d.doc_id.clone(), score: s }
            })
            .collect();
        out.insert(q, scaled).expect("normalized run stays valid");
    }
    out
}

/// Sums the two runs' scores per document (a missing side counts 0) and
/// keeps the top `k`.
pub fn fuse_sum(run_a: &RunList, run_b: &RunList, k: usize, normalize: bool) -> Fused {
    let (a, b);
    let (run_a, run_b) = if normalize {
        a = min_max_normalize(run_a);
        b = min_max_normalize(run_b);
        (&a, &b)
    } else {
        (run_a, run_b)
    };
    let queries: BTreeSet<&str> = run_a.query_ids().chain(run_b.query_ids()).collect();
    let mut out = RunList::new();
    let mut one_sided = 0;
    for q in queries {
        let (ra, rb) = (run_a.get(q), run_b.get(q));
        if ra.is_none() || rb.is_none() {
            one_sided += 1;
        }
        let mut summed: BTreeMap<&str, f64> = BTreeMap::new();
        for d in ra.into_iter().flatten() {
            *summed.entry(d.doc_id.as_str()).or_default() += d.score;
        }
        for d in rb.into_iter().flatten() {
            *summed.entry(d.doc_id.as_str()).or_default() += d.score;
        }
        let entries = summed.into_iter().map(|(d, s)| ScoredDoc::new(d, s)).collect();
        out.insert(q, rank_top_k(entries, k)).expect("fused scores are finite");
    }
    Fused { run: out, one_sided }
}
