//! Hard-negative mining: candidate pools from one or more retrievers,
//! uniform seeded sampling, and teacher scores for every emitted triplet.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{cosine, GroundTruth};
use crate::encoder::{EncoderParams, PoolingMode};
use crate::error::{config, invalid, Result};
use crate::index::InvertedIndex;
use crate::lexical::{Bm25Index, Bm25Params};
use crate::math::derive_seed;
use crate::objectives::NegativeSource;
use crate::sparse::SparseVec;
use crate::types::{Collection, Qrels, RunList, ScoredDoc, TeacherScores, Text, TripletRecord};

/// A relevance scorer with full access to both texts.
pub trait Teacher {
    fn name(&self) -> String;
    fn score(&self, query: &Text, doc: &Text) -> f64;
}

/// `teacher.score(q, d)`.
pub fn teacher_score(teacher: &dyn Teacher, query: &Text, doc: &Text) -> f64 {
    teacher.score(query, doc)
}

/// Scores topic alignment from the generator's ground truth:
/// `scale · cos(τ_q, θ_d)` plus seeded Gaussian noise per `(q, d)` pair.
///
/// Texts unknown to the ground truth fall back to a topic estimate from
/// their tokens.
#[derive(Debug, Clone)]
pub struct OracleTeacher<'a> {
    truth: &'a GroundTruth,
    pub scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl<'a> OracleTeacher<'a> {
    pub const DEFAULT_SCALE: f64 = 1.0;
    pub const DEFAULT_NOISE: f64 = 0.1;

    pub fn new(truth: &'a GroundTruth, noise: f64, seed: u64) -> Result<Self> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(invalid("teacher noise must be a non-negative number"));
        }
        Ok(Self { truth, scale: Self::DEFAULT_SCALE, noise, seed })
    }

    pub fn noise_free(truth: &'a GroundTruth) -> Self {
        Self { truth, scale: Self::DEFAULT_SCALE, noise: 0.0, seed: 0 }
    }

    fn estimate_topics(&self, tokens: &[u32]) -> Vec<f64> {
        let mut mix: Vec<f64> = self
            .truth
            .topic_terms
            .iter()
            .map(|terms| {
                tokens
                    .iter()
                    .map(|t| terms.binary_search_by_key(t, |p| p.0).map_or(0.0, |i| terms[i].1))
                    .sum()
            })
            .collect();
        let total: f64 = mix.iter().sum();
        if total > 0.0 {
            mix.iter_mut().for_each(|m| *m /= total);
        }
        mix
    }
}

impl Teacher for OracleTeacher<'_> {
    fn name(&self) -> String {
        format!("oracle(scale={},noise={},seed={})", self.scale, self.noise, self.seed)
    }

    fn score(&self, query: &Text, doc: &Text) -> f64 {
        let q = self.truth.query_topics.get(&query.id).cloned().unwrap_or_else(|| self.estimate_topics(&query.tokens));
        let d = self.truth.doc_mixtures.get(&doc.id).cloned().unwrap_or_else(|| self.estimate_topics(&doc.tokens));
        let mut s = self.scale * cosine(&q, &d);
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &["teacher", &query.id, &doc.id]));
            let z: f64 = StandardNormal.sample(&mut rng);
            s += self.noise * z;
        }
        s
    }
}

/// Something that ranks corpus documents for a query.
pub trait Retriever {
    /// Stable identifier recorded in mining manifests.
    fn name(&self) -> String;
    fn retrieve(&self, query: &Text, k: usize) -> Result<Vec<ScoredDoc>>;

    fn run(&self, queries: &Collection, k: usize) -> Result<RunList> {
        let mut run = RunList::new();
        for q in queries {
            run.insert(q.id.clone(), self.retrieve(q, k)?)?;
        }
        Ok(run)
    }
}

pub struct Bm25Retriever {
    pub index: Bm25Index,
}

impl Bm25Retriever {
    pub fn new(corpus: &Collection) -> Result<Self> {
        Ok(Self { index: Bm25Index::build(corpus, Bm25Params::default())? })
    }
}

impl Retriever for Bm25Retriever {
    fn name(&self) -> String {
        String::from("bm25(k1=0.9,b=0.4)")
    }

    fn retrieve(&self, query: &Text, k: usize) -> Result<Vec<ScoredDoc>> {
        Ok(self.index.retrieve(&query.tokens, k))
    }
}

/// Exact retrieval with an encoder over an inverted index of its own
/// document representations.
pub struct SparseRetriever {
    pub model: EncoderParams,
    pub mode: PoolingMode,
    pub index: InvertedIndex,
    digest: String,
}

impl SparseRetriever {
    pub fn new(model: EncoderParams, mode: PoolingMode, corpus: &Collection) -> Result<Self> {
        let reps = encode_collection(&model, mode, corpus)?;
        let index = InvertedIndex::build(model.vocab, corpus.iter().map(|d| d.id.as_str()).zip(reps.iter()))?;
        let digest = model.digest_hex();
        Ok(Self { model, mode, index, digest })
    }

    pub fn checkpoint_digest(&self) -> &str {
        &self.digest
    }

    pub fn encode_queries(&self, queries: &Collection) -> Result<Vec<SparseVec>> {
        encode_collection(&self.model, self.mode, queries)
    }
}

impl Retriever for SparseRetriever {
    fn name(&self) -> String {
        format!("encoder(sha256={},pooling={:?})", self.digest, self.mode)
    }

    fn retrieve(&self, query: &Text, k: usize) -> Result<Vec<ScoredDoc>> {
        let q = self.model.encode(&query.tokens, self.mode)?;
        Ok(self.index.retrieve(&q, k))
    }
}

/// Adapts a closure into a [`Retriever`].
pub struct FnRetriever<F> {
    pub name: String,
    pub f: F,
}

impl<F: Fn(&Text, usize) -> Result<Vec<ScoredDoc>>> Retriever for FnRetriever<F> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn retrieve(&self, query: &Text, k: usize) -> Result<Vec<ScoredDoc>> {
        (self.f)(query, k)
    }
}

pub fn encode_collection(model: &EncoderParams, mode: PoolingMode, texts: &Collection) -> Result<Vec<SparseVec>> {
    texts.iter().map(|t| model.encode(&t.tokens, mode)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub source: NegativeSource,
    pub top_k: usize,
    pub negatives_per_query: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { source: NegativeSource::Bm25, top_k: 50, negatives_per_query: 20, seed: 0 }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source == NegativeSource::Spans {
            return Err(config("span pairs are not a mining source"));
        }
        if !(self.top_k >= self.negatives_per_query && self.negatives_per_query >= 1) {
            return Err(config("mining requires top_k >= negatives_per_query >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningManifest {
    pub source: NegativeSource,
    pub seed: u64,
    pub top_k: usize,
    pub negatives_per_query: usize,
    pub retrievers: Vec<String>,
    pub teacher: Option<String>,
    pub queries_mined: usize,
    pub queries_skipped: usize,
    pub triplets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mined {
    pub triplets: Vec<TripletRecord>,
    /// Queries with no relevant document or no candidate left after filtering.
    pub skipped: Vec<String>,
    pub manifest: MiningManifest,
}

/// Union of every retriever's top-k, minus judged-relevant documents, in
/// ascending id order.
pub fn candidate_pool(retrievers: &[&dyn Retriever], query: &Text, qrels: &Qrels, top_k: usize) -> Result<Vec<String>> {
    let mut pool = BTreeSet::new();
    for r in retrievers {
        for hit in r.retrieve(query, top_k)? {
            if qrels.grade(&query.id, &hit.doc_id) == 0 {
                pool.insert(hit.doc_id);
            }
        }
    }
    Ok(pool.into_iter().collect())
}

/// Mines triplets with negatives drawn from the union of `retrievers`' pools.
///
/// Queries are processed in ascending id order; each query's sampling uses
/// its own stream derived from `(seed, query id)`.
pub fn mine_with(
    retrievers: &[&dyn Retriever],
    corpus: &Collection,
    queries: &Collection,
    qrels: &Qrels,
    cfg: &MiningConfig,
    teacher: Option<&dyn Teacher>,
) -> Result<Mined> {
    cfg.validate()?;
    if retrievers.is_empty() {
        return Err(config("mining needs at least one retriever"));
    }
    let mut ordered: Vec<&Text> = queries.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut triplets = Vec::new();
    let mut skipped = Vec::new();
    for q in ordered {
        let positives: Vec<&Text> = qrels.relevant(&q.id).into_iter().filter_map(|d| corpus.get(d)).collect();
        let pool = if positives.is_empty() { Vec::new() } else { candidate_pool(retrievers, q, qrels, cfg.top_k)? };
        if pool.is_empty() {
            skipped.push(q.id.clone());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["mine", &q.id]));
        let take = cfg.negatives_per_query.min(pool.len());
        let mut picks = sample(&mut rng, pool.len(), take).into_vec();
        picks.sort_unstable();
        for p in picks {
            let pos = positives[rng.random_range(0..positives.len())];
            let neg = corpus.get(&pool[p]).ok_or_else(|| invalid(format!("retrieved unknown document {}", pool[p])))?;
            let scores = teacher.map(|t| TeacherScores { pos: t.score(q, pos), neg: t.score(q, neg) });
            triplets.push(TripletRecord::new(q.id.clone(), pos.id.clone(), neg.id.clone(), scores)?);
        }
    }
    let manifest = MiningManifest {
        source: cfg.source,
        seed: cfg.seed,
        top_k: cfg.top_k,
        negatives_per_query: cfg.negatives_per_query,
        retrievers: retrievers.iter().map(|r| r.name()).collect(),
        teacher: teacher.map(|t| t.name()),
        queries_mined: queries.len() - skipped.len(),
        queries_skipped: skipped.len(),
        triplets: triplets.len(),
    };
    Ok(Mined { triplets, skipped, manifest })
}

pub fn mine_bm25(
    corpus: &Collection,
    queries: &Collection,
    qrels: &Qrels,
    cfg: &MiningConfig,
    teacher: Option<&dyn Teacher>,
) -> Result<Mined> {
    if cfg.source != NegativeSource::Bm25 {
        return Err(config("mine_bm25 expects source Bm25"));
    }
    let bm25 = Bm25Retriever::new(corpus)?;
    mine_with(&[&bm25], corpus, queries, qrels, cfg, teacher)
}

pub fn mine_self(
    model: &EncoderParams,
    mode: PoolingMode,
    corpus: &Collection,
    queries: &Collection,
    qrels: &Qrels,
    cfg: &MiningConfig,
    teacher: Option<&dyn Teacher>,
) -> Result<Mined> {
    if cfg.source != NegativeSource::SelfModel {
        return Err(config("mine_self expects source SelfModel"));
    }
    let retriever = SparseRetriever::new(model.clone(), mode, corpus)?;
    mine_with(&[&retriever], corpus, queries, qrels, cfg, teacher)
}

pub fn mine_ensemble(
    retrievers: &[&dyn Retriever],
    corpus: &Collection,
    queries: &Collection,
    qrels: &Qrels,
    cfg: &MiningConfig,
    teacher: Option<&dyn Teacher>,
) -> Result<Mined> {
    if cfg.source != NegativeSource::Ensemble {
        return Err(config("mine_ensemble expects source Ensemble"));
    }
    if retrievers.len() < 2 {
        return Err(config("ensemble mining needs at least 2 retrievers"));
    }
    mine_with(retrievers, corpus, queries, qrels, cfg, teacher)
}

/// Boxes a closure retriever; handy for heterogeneous ensembles.
pub fn fn_retriever<'a, F>(name: impl Into<String>, f: F) -> Box<dyn Retriever + 'a>
where
    F: Fn(&Text, usize) -> Result<Vec<ScoredDoc>> + 'a,
{
    Box::new(FnRetriever { name: name.into(), f })
}
