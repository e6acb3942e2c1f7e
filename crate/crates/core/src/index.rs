//! Exact inverted index over sparse document representations.
//!
//! Retrieval is term-at-a-time into a dense accumulator. Query terms are
//! visited in ascending order and each accumulator starts at `0.0`, so scores
//! are bit-identical to [`crate::sparse::dot`].

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::sparse::{SparseVec, TermId};
use crate::types::{rank_top_k, ScoredDoc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub doc: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostingList {
    pub term: TermId,
    /// Strictly increasing doc ordinals, weights > 0.
    pub postings: Vec<Posting>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    vocab: usize,
    doc_ids: Vec<String>,
    lists: Vec<PostingList>,
    doc_nnz: Vec<u32>,
    quantized: bool,
}

const MAGIC: &[u8; 4] = b"LSRI";
const VERSION: u32 = 1;

impl InvertedIndex {
    /// Builds from `(doc_id, vector)` pairs; terms must be below `vocab`.
    pub fn build<'a, I>(vocab: usize, docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a SparseVec)>,
    {
        let mut lists: Vec<PostingList> =
            (0..vocab).map(|t| PostingList { term: t as TermId, postings: Vec::new() }).collect();
        let mut doc_ids = Vec::new();
        let mut doc_nnz = Vec::new();
        let mut seen = BTreeSet::new();
        for (ordinal, (id, vec)) in docs.into_iter().enumerate() {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.into()));
            }
            let doc = u32::try_from(ordinal).map_err(|_| invalid("too many documents"))?;
            for (t, w) in vec.iter() {
                let list = lists
                    .get_mut(t as usize)
                    .ok_or_else(|| invalid(alloc::format!("term {t} outside vocabulary of {vocab}")))?;
                list.postings.push(Posting { doc, weight: w });
            }
            doc_ids.push(String::from(id));
            doc_nnz.push(vec.len() as u32);
        }
        Ok(Self { vocab, doc_ids, lists, doc_nnz, quantized: false })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn posting_list(&self, term: TermId) -> Option<&PostingList> {
        self.lists.get(term as usize)
    }

    /// Number of documents activating `term`.
    pub fn doc_freq(&self, term: TermId) -> usize {
        self.lists.get(term as usize).map_or(0, |l| l.postings.len())
    }

    pub fn total_postings(&self) -> usize {
        self.lists.iter().map(|l| l.postings.len()).sum()
    }

    /// Per-document count of non-zero terms.
    pub fn doc_nnz(&self) -> &[u32] {
        &self.doc_nnz
    }

    pub fn is_quantized(&self) -> bool {
        self.quantized
    }

    /// Reassembles the stored vector of one document.
    pub fn doc_vector(&self, ordinal: usize) -> SparseVec {
        let doc = ordinal as u32;
        let pairs = self.lists.iter().filter_map(|l| {
            l.postings
                .binary_search_by_key(&doc, |p| p.doc)
                .ok()
                .map(|i| (l.term, l.postings[i].weight))
        });
        SparseVec::from_pairs(pairs).expect("postings hold valid weights")
    }

    /// Exact top-`k` by dot product. Zero-score documents are omitted; ties
    /// go to the smaller doc id.
    pub fn retrieve(&self, query: &SparseVec, k: usize) -> Vec<ScoredDoc> {
        if k == 0 || query.is_empty() || self.doc_ids.is_empty() {
            return Vec::new();
        }
        let mut acc = vec![0.0f64; self.doc_ids.len()];
        let mut seen = vec![false; self.doc_ids.len()];
        let mut touched = Vec::new();
        for (t, qw) in query.iter() {
            let Some(list) = self.lists.get(t as usize) else { continue };
            for p in &list.postings {
                let d = p.doc as usize;
                if !seen[d] {
                    seen[d] = true;
                    touched.push(p.doc);
                }
                acc[d] += qw * p.weight;
            }
        }
        let hits: Vec<ScoredDoc> = touched
            .into_iter()
            .filter(|&d| acc[d as usize] > 0.0)
            .map(|d| ScoredDoc { doc_id: self.doc_ids[d as usize].clone(), score: acc[d as usize] })
            .collect();
        rank_top_k(hits, k)
    }

    /// Expected number of multiply-adds per query-document score:
    /// `Σ_j p_j^q · p_j^d` with activation frequencies measured on `queries`
    /// and on the indexed corpus.
    pub fn estimate_flops(&self, queries: &[SparseVec]) -> Result<f64> {
        if queries.is_empty() {
            return Err(invalid("FLOPS estimate needs at least one query"));
        }
        if self.doc_ids.is_empty() {
            return Err(invalid("FLOPS estimate needs a non-empty corpus"));
        }
        let mut query_counts = vec![0u64; self.vocab];
        for q in queries {
            for &t in q.terms() {
                if let Some(c) = query_counts.get_mut(t as usize) {
                    *c += 1;
                }
            }
        }
        // Integer accumulation keeps the estimate exact up to one division.
        let overlap: u128 = query_counts
            .iter()
            .zip(&self.lists)
            .map(|(&cq, l)| cq as u128 * l.postings.len() as u128)
            .sum();
        Ok(overlap as f64 / (queries.len() as f64 * self.doc_ids.len() as f64))
    }

    /// 8-bit linear quantization of all weights against the global maximum.
    /// Weights that round to zero are dropped.
    pub fn quantized(&self) -> Self {
        let max = self
            .lists
            .iter()
            .flat_map(|l| l.postings.iter().map(|p| p.weight))
            .fold(0.0f64, f64::max);
        let mut out = self.clone();
        out.quantized = true;
        if max == 0.0 {
            return out;
        }
        let step = max / 255.0;
        for nnz in out.doc_nnz.iter_mut() {
            *nnz = 0;
        }
        for l in out.lists.iter_mut() {
            l.postings.retain_mut(|p| {
                let level = libm::round(p.weight / step);
                p.weight = level * step;
                level > 0.0
            });
            for p in &l.postings {
                out.doc_nnz[p.doc as usize] += 1;
            }
        }
        out
    }

    /// Versioned binary encoding: header `LSRI`, version, N, V, number of
    /// non-empty lists; then doc ids; then each list as term, length,
    /// varint doc-ordinal gaps and little-endian `f64` weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(u8::from(self.quantized));
        out.extend_from_slice(&(self.doc_ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.vocab as u64).to_le_bytes());
        let non_empty: Vec<&PostingList> = self.lists.iter().filter(|l| !l.postings.is_empty()).collect();
        out.extend_from_slice(&(non_empty.len() as u64).to_le_bytes());
        for id in &self.doc_ids {
            put_varint(&mut out, id.len() as u64);
            out.extend_from_slice(id.as_bytes());
        }
        for l in non_empty {
            out.extend_from_slice(&l.term.to_le_bytes());
            put_varint(&mut out, l.postings.len() as u64);
            let mut prev = 0u32;
            for (i, p) in l.postings.iter().enumerate() {
                let gap = if i == 0 { p.doc } else { p.doc - prev };
                put_varint(&mut out, u64::from(gap));
                prev = p.doc;
            }
            for p in &l.postings {
                out.extend_from_slice(&p.weight.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(corrupt(alloc::format!("unsupported index version {version}")));
        }
        let quantized = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(corrupt(alloc::format!("bad quantization flag {b}"))),
        };
        let n = r.u64()? as usize;
        let vocab = r.u64()? as usize;
        let lists_present = r.u64()? as usize;
        if lists_present > vocab {
            return Err(corrupt("more posting lists than vocabulary terms"));
        }
        let mut doc_ids = Vec::with_capacity(n.min(bytes.len()));
        for _ in 0..n {
            let len = r.varint()? as usize;
            let raw = r.take(len)?;
            let id = core::str::from_utf8(raw).map_err(|_| corrupt("doc id is not UTF-8"))?;
            doc_ids.push(String::from(id));
        }
        let mut lists: Vec<PostingList> =
            (0..vocab).map(|t| PostingList { term: t as TermId, postings: Vec::new() }).collect();
        let mut doc_nnz = vec![0u32; n];
        let mut last_term: Option<TermId> = None;
        for _ in 0..lists_present {
            let term = u32::from_le_bytes(r.array()?);
            if term as usize >= vocab || last_term.is_some_and(|t| t >= term) {
                return Err(corrupt("posting list terms out of order or range"));
            }
            last_term = Some(term);
            let len = r.varint()? as usize;
            if len == 0 || len > n {
                return Err(corrupt("bad posting list length"));
            }
            let mut docs = Vec::with_capacity(len);
            let mut prev = 0u64;
            for i in 0..len {
                let gap = r.varint()?;
                if i > 0 && gap == 0 {
                    return Err(corrupt("doc ordinals not strictly increasing"));
                }
                prev += gap;
                if prev as usize >= n {
                    return Err(corrupt("doc ordinal out of range"));
                }
                docs.push(prev as u32);
            }
            let mut postings = Vec::with_capacity(len);
            for doc in docs {
                let weight = f64::from_bits(r.u64()?);
                if !weight.is_finite() || weight <= 0.0 {
                    return Err(corrupt("posting weight must be finite and positive"));
                }
                doc_nnz[doc as usize] += 1;
                postings.push(Posting { doc, weight });
            }
            lists[term as usize].postings = postings;
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        let mut seen = BTreeSet::new();
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { vocab, doc_ids, lists, doc_nnz, quantized })
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(corrupt("varint too long"))
    }
}
