//! Collections, relevance judgments, triplets and ranked runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type TokenId = u32;

/// Output vocabulary: dense term ids `0..size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    terms: Vec<String>,
}

impl Vocab {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        if terms.len() < 2 {
            return Err(invalid("vocabulary needs at least 2 terms"));
        }
        let mut seen = BTreeSet::new();
        for t in &terms {
            if !seen.insert(t.as_str()) {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Self { terms })
    }

    /// Synthetic vocabulary `t0, t1, ...`.
    pub fn synthetic(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| alloc::format!("t{i}")).collect())
    }

    pub fn size(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.terms.iter().position(|t| t == term).map(|i| i as u32)
    }
}

/// A document or query: an id plus input-vocabulary token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Text {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

pub type Document = Text;
pub type Query = Text;

impl Text {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Self { id: id.into(), tokens }
    }
}

/// An ordered set of texts with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Text>", into = "Vec<Text>")]
pub struct Collection {
    items: Vec<Text>,
    by_id: BTreeMap<String, usize>,
}

impl Collection {
    pub fn new(items: Vec<Text>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, t) in items.iter().enumerate() {
            if t.tokens.is_empty() {
                return Err(invalid(alloc::format!("text {} has no tokens", t.id)));
            }
            if by_id.insert(t.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(t.id.clone()));
            }
        }
        Ok(Self { items, by_id })
    }

    /// Checks every token id is below `input_vocab`.
    pub fn validate_tokens(&self, input_vocab: usize) -> Result<()> {
        for t in &self.items {
            if let Some(&bad) = t.tokens.iter().find(|&&tok| tok as usize >= input_vocab) {
                return Err(invalid(alloc::format!(
                    "text {} has token {bad} outside input vocabulary of {input_vocab}",
                    t.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Text] {
        &self.items
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Text> {
        self.items.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Text> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn max_token(&self) -> Option<TokenId> {
        self.items.iter().flat_map(|t| t.tokens.iter().copied()).max()
    }
}

impl TryFrom<Vec<Text>> for Collection {
    type Error = Error;

    fn try_from(items: Vec<Text>) -> Result<Self> {
        Self::new(items)
    }
}

impl From<Collection> for Vec<Text> {
    fn from(c: Collection) -> Self {
        c.items
    }
}

impl<'a> IntoIterator for &'a Collection {
    type Item = &'a Text;
    type IntoIter = core::slice::Iter<'a, Text>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Relevance judgments: query id → doc id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments.entry(query_id.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments.get(query_id).and_then(|m| m.get(doc_id)).copied().unwrap_or(0)
    }

    /// Documents with grade ≥ 1, ascending by id.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        self.judgments
            .get(query_id)
            .map(|m| m.iter().filter(|(_, &g)| g >= 1).map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn is_judged(&self, query_id: &str, doc_id: &str) -> bool {
        self.judgments.get(query_id).is_some_and(|m| m.contains_key(doc_id))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// One `(q, d+, d-)` training example with optional teacher scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub query_id: String,
    pub pos_doc_id: String,
    pub neg_doc_id: String,
    pub teacher: Option<TeacherScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherScores {
    pub pos: f64,
    pub neg: f64,
}

impl TripletRecord {
    pub fn new(
        query_id: impl Into<String>,
        pos_doc_id: impl Into<String>,
        neg_doc_id: impl Into<String>,
        teacher: Option<TeacherScores>,
    ) -> Result<Self> {
        let t = Self {
            query_id: query_id.into(),
            pos_doc_id: pos_doc_id.into(),
            neg_doc_id: neg_doc_id.into(),
            teacher,
        };
        if t.pos_doc_id == t.neg_doc_id {
            return Err(invalid(alloc::format!(
                "triplet for {} uses {} as both positive and negative",
                t.query_id, t.pos_doc_id
            )));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, then ascending doc id.
pub fn ranking_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Sorts into canonical ranking order and keeps the first `k`.
pub fn rank_top_k(mut entries: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    if entries.len() > k && k > 0 {
        entries.select_nth_unstable_by(k - 1, ranking_order);
        entries.truncate(k);
    }
    entries.sort_by(ranking_order);
    entries.truncate(k);
    entries
}

/// Ranked results per query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunList {
    runs: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RunList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a ranking for `query_id`, re-sorting into canonical order.
    /// Duplicate doc ids and non-finite scores are rejected.
    pub fn insert(&mut self, query_id: impl Into<String>, mut entries: Vec<ScoredDoc>) -> Result<()> {
        let query_id = query_id.into();
        entries.sort_by(ranking_order);
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(invalid(alloc::format!("non-finite score for {query_id}/{}", e.doc_id)));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::DuplicateId(alloc::format!("{query_id}/{}", e.doc_id)));
            }
        }
        self.runs.insert(query_id, entries);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.runs.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.runs.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.runs.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Keeps at most `k` entries per query.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            runs: self
                .runs
                .iter()
                .map(|(q, v)| (q.clone(), v.iter().take(k).cloned().collect()))
                .collect(),
        }
    }
}

impl ScoredDoc {
    pub fn new(doc_id: impl ToString, score: f64) -> Self {
        Self { doc_id: doc_id.to_string(), score }
    }
}
