//! Plain-text formats: TSV collections, TREC qrels and runs, triplets.
//!
//! Readers work on any `&str` and report 1-based line numbers; the `*_file`
//! helpers add the path to the error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lsr_core::types::{Collection, Qrels, RunList, ScoredDoc, TeacherScores, Text, TripletRecord};

use crate::error::{LsrError, Result};

/// Decimal digits written for every real number.
pub const DECIMALS: usize = 6;

fn parse_err(line: usize, message: impl Into<String>) -> LsrError {
    LsrError::Parse { path: String::new(), line, message: message.into() }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
}

fn real(line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| parse_err(line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} {field:?} is not finite")));
    }
    Ok(v)
}

pub fn fmt_real(v: f64) -> String {
    // folds -0.000000 into 0.000000
    let s = format!("{v:.DECIMALS$}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

pub fn read_collection(text: &str) -> Result<Collection> {
    let mut items = Vec::new();
    let mut seen = BTreeMap::new();
    for (n, l) in lines(text) {
        let (id, toks) = l.split_once('\t').ok_or_else(|| parse_err(n, "expected <id>\\t<tokens>"))?;
        if id.is_empty() {
            return Err(parse_err(n, "empty id"));
        }
        if let Some(prev) = seen.insert(id.to_string(), n) {
            return Err(parse_err(n, format!("id {id} already defined on line {prev}")));
        }
        let tokens = toks
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| parse_err(n, format!("token {t:?} is not a non-negative integer"))))
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(parse_err(n, "no tokens"));
        }
        items.push(Text::new(id, tokens));
    }
    Ok(Collection::new(items)?)
}

pub fn write_collection(c: &Collection) -> String {
    let mut out = String::new();
    for t in c.iter() {
        out.push_str(&t.id);
        out.push('\t');
        let toks: Vec<String> = t.tokens.iter().map(u32::to_string).collect();
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    out
}

/// TREC qrels: `<qid> 0 <docid> <grade>`.
pub fn read_qrels(text: &str) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (n, l) in lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let [qid, _, did, grade] = f[..] else {
            return Err(parse_err(n, format!("expected 4 fields, found {}", f.len())));
        };
        let grade: u32 = grade.parse().map_err(|_| parse_err(n, format!("grade {grade:?} is not a non-negative integer")))?;
        if q.is_judged(qid, did) {
            return Err(parse_err(n, format!("duplicate judgment for {qid}/{did}")));
        }
        q.insert(qid, did, grade);
    }
    Ok(q)
}

pub fn write_qrels(q: &Qrels) -> String {
    let mut out = String::new();
    for (qid, did, g) in q.iter() {
        writeln!(out, "{qid} 0 {did} {g}").unwrap();
    }
    out
}

/// TREC run: `<qid> Q0 <docid> <rank> <score> <tag>`. Entries are re-sorted
/// into canonical order (score descending, then doc id).
pub fn read_run(text: &str) -> Result<RunList> {
    let mut per_query: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
    for (n, l) in lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let [qid, _, did, rank, score, _tag] = f[..] else {
            return Err(parse_err(n, format!("expected 6 fields, found {}", f.len())));
        };
        rank.parse::<usize>().map_err(|_| parse_err(n, format!("rank {rank:?} is not a positive integer")))?;
        let score = real(n, score, "score")?;
        per_query.entry(qid.to_string()).or_default().push(ScoredDoc::new(did, score));
    }
    let mut run = RunList::new();
    for (q, docs) in per_query {
        run.insert(q, docs)?;
    }
    Ok(run)
}

pub fn write_run(run: &RunList, tag: &str) -> String {
    let mut out = String::new();
    for (q, docs) in run.iter() {
        for (i, d) in docs.iter().enumerate() {
            writeln!(out, "{q} Q0 {} {} {} {tag}", d.doc_id, i + 1, fmt_real(d.score)).unwrap();
        }
    }
    out
}

/// `<qid>\t<pos>\t<neg>[\t<teacher_pos>\t<teacher_neg>]`.
pub fn read_triplets(text: &str) -> Result<Vec<TripletRecord>> {
    lines(text)
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let teacher = match f.len() {
                3 => None,
                5 => Some(TeacherScores { pos: real(n, f[3], "teacher_pos")?, neg: real(n, f[4], "teacher_neg")? }),
                k => return Err(parse_err(n, format!("expected 3 or 5 tab-separated fields, found {k}"))),
            };
            TripletRecord::new(f[0], f[1], f[2], teacher).map_err(|e| parse_err(n, e.to_string()))
        })
        .collect()
}

pub fn write_triplets(ts: &[TripletRecord]) -> String {
    let mut out = String::new();
    for t in ts {
        write!(out, "{}\t{}\t{}", t.query_id, t.pos_doc_id, t.neg_doc_id).unwrap();
        if let Some(s) = t.teacher {
            write!(out, "\t{}\t{}", fmt_real(s.pos), fmt_real(s.neg)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| LsrError::Io { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| LsrError::Io { path: dir.into(), source })?;
    }
    std::fs::write(path, text).map_err(|source| LsrError::Io { path: path.into(), source })
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        LsrError::Parse { line, message, .. } => LsrError::Parse { path: path.display().to_string(), line, message },
        other => other,
    })
}

pub fn read_collection_file(path: &Path) -> Result<Collection> {
    with_path(path, read_collection(&read_text(path)?))
}

pub fn read_qrels_file(path: &Path) -> Result<Qrels> {
    with_path(path, read_qrels(&read_text(path)?))
}

pub fn read_run_file(path: &Path) -> Result<RunList> {
    with_path(path, read_run(&read_text(path)?))
}

pub fn read_triplets_file(path: &Path) -> Result<Vec<TripletRecord>> {
    with_path(path, read_triplets(&read_text(path)?))
}
