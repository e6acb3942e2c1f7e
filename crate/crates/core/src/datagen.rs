//! Synthetic retrieval benchmarks with known generative ground truth.
//!
//! Topics are sparse distributions over an in-domain slice of the input
//! vocabulary. Each document draws a topic mixture from a symmetric Dirichlet
//! and samples its tokens from that mixture plus a uniform background. A query
//! picks a source document and samples its tokens from the source's dominant
//! topic. A document is relevant (grade 1) when it is the source or when the
//! cosine between its mixture and the query's one-hot topic vector reaches the
//! relevance threshold.
//!
//! Shifted benchmarks reuse the topics but skew the topic prior and remap a
//! fraction of the in-domain tokens onto a reserved slice of the vocabulary
//! that in-domain text never uses.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math;
use crate::types::{Collection, Qrels, Text, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    /// Input vocabulary size (token ids).
    pub input_vocab: usize,
    /// Output vocabulary size of the encoder.
    pub vocab: usize,
    /// Fraction of the input vocabulary reserved for shifted corpora.
    pub reserved_fraction: f64,
    pub topics: usize,
    /// Distinct tokens carrying each topic's mass.
    pub terms_per_topic: usize,
    /// Dirichlet concentration of each topic's term weights.
    pub term_concentration: f64,
    /// Symmetric Dirichlet concentration of document topic mixtures.
    pub topic_concentration: f64,
    /// Probability that a document token comes from the uniform background.
    pub background_mass: f64,
    pub docs: usize,
    pub train_queries: usize,
    pub dev_queries: usize,
    pub doc_len: (usize, usize),
    pub query_len: (usize, usize),
    pub relevance_threshold: f64,
    pub shifts: Vec<ShiftSpec>,
    pub seed: u64,
}

/// Parameters of one out-of-domain benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Probability that an in-domain token id is remapped to a reserved id.
    pub vocab_shift: f64,
    /// Weight of a random skewed prior mixed into the uniform topic prior.
    pub topic_prior_shift: f64,
    pub docs: usize,
    pub queries: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            input_vocab: 500,
            vocab: 500,
            reserved_fraction: 0.25,
            topics: 20,
            terms_per_topic: 40,
            term_concentration: 1.0,
            topic_concentration: 0.6,
            background_mass: 0.2,
            docs: 3000,
            train_queries: 1000,
            dev_queries: 300,
            doc_len: (24, 48),
            query_len: (4, 8),
            relevance_threshold: 0.9,
            shifts: vec![
                ShiftSpec { vocab_shift: 0.1, topic_prior_shift: 0.25, docs: 1000, queries: 100 },
                ShiftSpec { vocab_shift: 0.2, topic_prior_shift: 0.5, docs: 1000, queries: 100 },
                ShiftSpec { vocab_shift: 0.3, topic_prior_shift: 0.5, docs: 1000, queries: 100 },
                ShiftSpec { vocab_shift: 0.4, topic_prior_shift: 0.75, docs: 1000, queries: 100 },
            ],
            seed: 42,
        }
    }
}

impl GeneratorSpec {
    /// A small spec for fast tests and smoke runs.
    pub fn tiny(seed: u64) -> Self {
        Self {
            input_vocab: 200,
            vocab: 200,
            topics: 8,
            terms_per_topic: 20,
            docs: 300,
            train_queries: 120,
            dev_queries: 40,
            doc_len: (12, 24),
            query_len: (3, 6),
            shifts: vec![
                ShiftSpec { vocab_shift: 0.2, topic_prior_shift: 0.5, docs: 150, queries: 30 },
                ShiftSpec { vocab_shift: 0.4, topic_prior_shift: 0.5, docs: 150, queries: 30 },
            ],
            seed,
            ..Self::default()
        }
    }

    /// Number of token ids available to in-domain text.
    pub fn in_domain_vocab(&self) -> usize {
        self.input_vocab - reserved_count(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_vocab", self.input_vocab),
            ("vocab", self.vocab),
            ("topics", self.topics),
            ("terms_per_topic", self.terms_per_topic),
            ("docs", self.docs),
            ("train_queries", self.train_queries),
            ("dev_queries", self.dev_queries),
            ("doc_len min", self.doc_len.0),
            ("query_len min", self.query_len.0),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(alloc::format!("{name} must be positive")));
            }
        }
        if self.vocab < 2 {
            return Err(invalid("vocab must be at least 2"));
        }
        if self.doc_len.0 > self.doc_len.1 || self.query_len.0 > self.query_len.1 {
            return Err(invalid("length ranges must satisfy min <= max"));
        }
        let fractions = [
            ("reserved_fraction", self.reserved_fraction),
            ("background_mass", self.background_mass),
        ];
        for (name, f) in fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(alloc::format!("{name} must lie in [0, 1]")));
            }
        }
        if self.reserved_fraction >= 1.0 {
            return Err(invalid("reserved_fraction must leave in-domain tokens"));
        }
        if self.terms_per_topic > self.in_domain_vocab() {
            return Err(invalid("terms_per_topic exceeds the in-domain vocabulary"));
        }
        for (name, c) in [("term_concentration", self.term_concentration), ("topic_concentration", self.topic_concentration)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(invalid(alloc::format!("{name} must be positive")));
            }
        }
        if !(self.relevance_threshold.is_finite() && self.relevance_threshold <= 1.0) {
            return Err(invalid("relevance_threshold must be at most 1"));
        }
        for (i, s) in self.shifts.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.vocab_shift) || !(0.0..=1.0).contains(&s.topic_prior_shift) {
                return Err(invalid(alloc::format!("shift {i}: fractions must lie in [0, 1]")));
            }
            if s.docs == 0 || s.queries == 0 {
                return Err(invalid(alloc::format!("shift {i}: counts must be positive")));
            }
            if s.vocab_shift > 0.0 && reserved_count(self) == 0 {
                return Err(invalid("vocabulary shift needs a non-empty reserved slice"));
            }
        }
        Ok(())
    }
}

fn reserved_count(spec: &GeneratorSpec) -> usize {
    (spec.input_vocab as f64 * spec.reserved_fraction) as usize
}

/// Generative parameters behind a benchmark.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per topic: `(token, probability)` pairs summing to 1.
    pub topic_terms: Vec<Vec<(TokenId, f64)>>,
    pub doc_mixtures: BTreeMap<String, Vec<f64>>,
    /// One-hot vector of the topic each query was sampled from.
    pub query_topics: BTreeMap<String, Vec<f64>>,
    pub query_source: BTreeMap<String, String>,
}

impl GroundTruth {
    /// Cosine between a document's mixture and a query's topic vector.
    pub fn relevance(&self, query_id: &str, doc_id: &str) -> Option<f64> {
        Some(cosine(self.query_topics.get(query_id)?, self.doc_mixtures.get(doc_id)?))
    }

    /// Largest deviation from 1 of any distribution's total mass.
    pub fn max_mass_error(&self) -> f64 {
        let topic = self.topic_terms.iter().map(|t| t.iter().map(|p| p.1).sum::<f64>());
        let mixes = self.doc_mixtures.values().chain(self.query_topics.values()).map(|m| m.iter().sum::<f64>());
        topic.chain(mixes).map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb = math::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One evaluation (or training) benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub corpus: Collection,
    pub queries: Collection,
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub corpus: Collection,
    pub train_queries: Collection,
    pub dev_queries: Collection,
    pub qrels: Qrels,
    pub truth: GroundTruth,
    pub warnings: Vec<String>,
}

impl Generated {
    pub fn dev_benchmark(&self) -> Benchmark {
        Benchmark {
            name: "dev".into(),
            corpus: self.corpus.clone(),
            queries: self.dev_queries.clone(),
            qrels: self.qrels.clone(),
        }
    }
}

const STREAM_TOPICS: u64 = 0;
const STREAM_DOCS: u64 = 1;
const STREAM_QUERIES: u64 = 2;
const STREAM_SHIFT: u64 = 16;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn dirichlet(rng: &mut ChaCha8Rng, alphas: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // every gamma draw underflowed; fall back to the largest alpha
        let best = (0..alphas.len()).max_by(|&a, &b| alphas[a].total_cmp(&alphas[b])).unwrap_or(0);
        draws[best] = 1.0;
    }
    draws
}

fn pick(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Lowest index of the largest entry.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn topics(spec: &GeneratorSpec) -> Vec<Vec<(TokenId, f64)>> {
    let mut rng = rng_for(spec.seed, STREAM_TOPICS);
    let pool = spec.in_domain_vocab();
    (0..spec.topics)
        .map(|_| {
            let mut support: Vec<usize> = sample(&mut rng, pool, spec.terms_per_topic).into_vec();
            support.sort_unstable();
            let weights = dirichlet(&mut rng, &vec![spec.term_concentration; support.len()]);
            support.into_iter().map(|t| t as TokenId).zip(weights).collect()
        })
        .collect()
}

struct Sampler<'a> {
    spec: &'a GeneratorSpec,
    topics: &'a [Vec<(TokenId, f64)>],
    /// Token remapping for shifted corpora (identity in-domain).
    remap: Option<Vec<TokenId>>,
}

impl Sampler<'_> {
    fn map(&self, t: TokenId) -> TokenId {
        self.remap.as_ref().map_or(t, |m| m[t as usize])
    }

    fn topic_token(&self, rng: &mut ChaCha8Rng, mixture: &[f64]) -> TokenId {
        let z = pick(rng, mixture);
        let topic = &self.topics[z];
        let probs: Vec<f64> = topic.iter().map(|p| p.1).collect();
        self.map(topic[pick(rng, &probs)].0)
    }

    fn document(&self, rng: &mut ChaCha8Rng, mixture: &[f64]) -> Vec<TokenId> {
        let (lo, hi) = self.spec.doc_len;
        let len = rng.random_range(lo..=hi);
        let pool = self.spec.in_domain_vocab() as u32;
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < self.spec.background_mass {
                    self.map(rng.random_range(0..pool))
                } else {
                    self.topic_token(rng, mixture)
                }
            })
            .collect()
    }

    fn query(&self, rng: &mut ChaCha8Rng, topic: &[f64]) -> Vec<TokenId> {
        let (lo, hi) = self.spec.query_len;
        let len = rng.random_range(lo..=hi);
        (0..len).map(|_| self.topic_token(rng, topic)).collect()
    }
}

struct Part {
    corpus: Vec<Text>,
    query_sets: Vec<Vec<Text>>,
    qrels: Qrels,
    truth: GroundTruth,
}

/// Zero padding that makes lexicographic id order match numeric order.
fn id_width(count: usize) -> usize {
    count.saturating_sub(1).max(1).ilog10() as usize + 1
}

/// Documents with their mixtures drawn from `prior`.
fn sample_docs(sampler: &Sampler<'_>, rng: &mut ChaCha8Rng, prior: &[f64], docs: usize, prefix: &str) -> Part {
    let spec = sampler.spec;
    let alphas: Vec<f64> = prior.iter().map(|p| p * spec.topic_concentration * spec.topics as f64).collect();
    let mut truth = GroundTruth::default();
    let mut corpus = Vec::with_capacity(docs);
    let width = id_width(docs);
    for i in 0..docs {
        let mix = dirichlet(rng, &alphas);
        let id = alloc::format!("{prefix}{i:0width$}");
        corpus.push(Text::new(id.clone(), sampler.document(rng, &mix)));
        truth.doc_mixtures.insert(id, mix);
    }
    Part { corpus, query_sets: Vec::new(), qrels: Qrels::new(), truth }
}

/// The in-domain benchmark: corpus, train and dev queries, qrels for both.
pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let topic_terms = topics(spec);
    let sampler = Sampler { spec, topics: &topic_terms, remap: None };
    let uniform = vec![1.0 / spec.topics as f64; spec.topics];

    let mut doc_rng = rng_for(spec.seed, STREAM_DOCS);
    let mut part = sample_docs(&sampler, &mut doc_rng, &uniform, spec.docs, "d");
    // Queries come from their own stream so query counts do not perturb documents.
    let mut query_rng = rng_for(spec.seed, STREAM_QUERIES);
    let focused = sample_queries(&sampler, &mut query_rng, &mut part, &[(spec.train_queries, "tq"), (spec.dev_queries, "dq")]);
    part.truth.topic_terms = topic_terms.clone();

    let mut warnings = Vec::new();
    if !focused {
        warnings.push(String::from("no document is topically focused; query sources drawn from all documents"));
    }
    if spec.topics == 1 {
        warnings.push(String::from("single topic: every document is relevant to every query"));
    }
    let mut sets = part.query_sets.into_iter();
    Ok(Generated {
        corpus: Collection::new(part.corpus)?,
        train_queries: Collection::new(sets.next().unwrap_or_default())?,
        dev_queries: Collection::new(sets.next().unwrap_or_default())?,
        qrels: part.qrels,
        truth: part.truth,
        warnings,
    })
}

/// Adds one query set per `(count, prefix)` with qrels and ground truth.
///
/// Sources are drawn among documents whose own dominant topic clears the
/// relevance threshold, so a source is also topically relevant to its query.
/// Returns false when no document qualifies and every document was eligible.
fn sample_queries(sampler: &Sampler<'_>, rng: &mut ChaCha8Rng, part: &mut Part, counts: &[(usize, &str)]) -> bool {
    let threshold = sampler.spec.relevance_threshold;
    let mixtures: Vec<&Vec<f64>> = part.corpus.iter().map(|d| &part.truth.doc_mixtures[&d.id]).collect();
    let norms: Vec<f64> = mixtures.iter().map(|m| math::sqrt(m.iter().map(|x| x * x).sum())).collect();
    let mut eligible: Vec<usize> =
        (0..mixtures.len()).filter(|&d| mixtures[d][argmax(mixtures[d])] / norms[d] >= threshold).collect();
    let focused = !eligible.is_empty();
    if !focused {
        eligible = (0..mixtures.len()).collect();
    }
    let mut topics = BTreeMap::new();
    let mut sources = BTreeMap::new();
    for &(count, prefix) in counts {
        let mut set = Vec::with_capacity(count);
        let width = id_width(count);
        for i in 0..count {
            let src = eligible[rng.random_range(0..eligible.len())];
            let id = alloc::format!("{prefix}{i:0width$}");
            let dominant = argmax(mixtures[src]);
            let mut onehot = vec![0.0; mixtures[src].len()];
            onehot[dominant] = 1.0;
            set.push(Text::new(id.clone(), sampler.query(rng, &onehot)));
            part.qrels.insert(id.clone(), part.corpus[src].id.clone(), 1);
            for (d, other) in mixtures.iter().enumerate() {
                // cosine against a one-hot vector
                if d != src && other[dominant] / norms[d] >= threshold {
                    part.qrels.insert(id.clone(), part.corpus[d].id.clone(), 1);
                }
            }
            topics.insert(id.clone(), onehot);
            sources.insert(id, part.corpus[src].id.clone());
        }
        part.query_sets.push(set);
    }
    part.truth.query_topics.extend(topics);
    part.truth.query_source.extend(sources);
    focused
}

/// Out-of-domain benchmarks built from the first `n_corpora` entries of
/// `spec.shifts` (at least 2). Corpus `c` does not depend on `n_corpora`.
pub fn generate_shifted(spec: &GeneratorSpec, n_corpora: usize) -> Result<Vec<(Benchmark, GroundTruth)>> {
    spec.validate()?;
    if n_corpora < 2 {
        return Err(invalid("need at least 2 shifted corpora"));
    }
    if n_corpora > spec.shifts.len() {
        return Err(invalid("more shifted corpora requested than shifts configured"));
    }
    let topic_terms = topics(spec);
    let in_domain = spec.in_domain_vocab();
    let reserved = spec.input_vocab - in_domain;
    let mut out = Vec::with_capacity(n_corpora);
    for (c, shift) in spec.shifts.iter().take(n_corpora).enumerate() {
        let mut rng = rng_for(spec.seed, STREAM_SHIFT + c as u64);
        let remap: Vec<TokenId> = (0..in_domain)
            .map(|t| {
                if reserved > 0 && rng.random::<f64>() < shift.vocab_shift {
                    (in_domain + rng.random_range(0..reserved)) as TokenId
                } else {
                    t as TokenId
                }
            })
            .collect();
        let skew = dirichlet(&mut rng, &vec![1.0; spec.topics]);
        let prior: Vec<f64> = skew
            .iter()
            .map(|s| (1.0 - shift.topic_prior_shift) / spec.topics as f64 + shift.topic_prior_shift * s)
            .collect();
        let sampler = Sampler { spec, topics: &topic_terms, remap: Some(remap) };
        let name = alloc::format!("shift{c}");
        let doc_prefix = alloc::format!("{name}-d");
        let query_prefix = alloc::format!("{name}-q");
        let mut part = sample_docs(&sampler, &mut rng, &prior, shift.docs, &doc_prefix);
        // an unfocused shifted corpus still gets valid qrels via the source rule
        sample_queries(&sampler, &mut rng, &mut part, &[(shift.queries, &query_prefix)]);
        part.truth.topic_terms = topic_terms
            .iter()
            .map(|t| {
                let mut mapped: BTreeMap<TokenId, f64> = BTreeMap::new();
                for &(tok, p) in t {
                    *mapped.entry(sampler.map(tok)).or_default() += p;
                }
                mapped.into_iter().collect()
            })
            .collect();
        let queries = part.query_sets.pop().unwrap_or_default();
        out.push((
            Benchmark {
                name,
                corpus: Collection::new(part.corpus)?,
                queries: Collection::new(queries)?,
                qrels: part.qrels,
            },
            part.truth,
        ));
    }
    Ok(out)
}
