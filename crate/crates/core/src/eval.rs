//! Rank-based effectiveness metrics and seed/corpus aggregation.
//!
//! A query is evaluated when the qrels hold at least one document with grade
//! ≥ 1 for it. Queries in the run without such judgments are skipped and
//! counted; judged queries missing from the run score 0.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math;
use crate::objectives::RegWeights;
use crate::types::{Qrels, RunList, ScoredDoc};

pub use crate::math::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Mrr,
    Ndcg,
    Recall,
}

impl Metric {
    pub fn label(self, cutoff: usize) -> String {
        match self {
            Metric::Mrr => alloc::format!("MRR@{cutoff}"),
            Metric::Ndcg => alloc::format!("nDCG@{cutoff}"),
            Metric::Recall => alloc::format!("R@{cutoff}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub cutoff: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Run queries without any relevant judgment, left out of the mean.
    pub skipped: usize,
}

/// Scores every run query holding at least one relevant judgment. As with
/// trec_eval's default, judged queries absent from the run are not scored.
fn report(metric: Metric, cutoff: usize, run: &RunList, qrels: &Qrels, f: impl Fn(&[ScoredDoc], &BTreeMap<String, u32>) -> f64) -> MetricReport {
    let mut skipped = 0;
    let mut per_query = BTreeMap::new();
    for (q, ranking) in run.iter() {
        match qrels.for_query(q) {
            Some(grades) if grades.values().any(|&g| g >= 1) => {
                // `+ 0.0` folds the -0.0 an empty float sum yields
                per_query.insert(String::from(q), f(&ranking[..ranking.len().min(cutoff)], grades) + 0.0);
            }
            _ => skipped += 1,
        }
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    MetricReport { metric, cutoff, per_query, mean, skipped }
}

fn grade_of(grades: &BTreeMap<String, u32>, doc: &str) -> u32 {
    grades.get(doc).copied().unwrap_or(0)
}

/// Reciprocal rank of the first relevant document within the cutoff.
pub fn mrr_at_k(run: &RunList, qrels: &Qrels, k: usize) -> MetricReport {
    report(Metric::Mrr, k, run, qrels, |top, grades| {
        top.iter()
            .position(|d| grade_of(grades, &d.doc_id) >= 1)
            .map_or(0.0, |i| 1.0 / (i + 1) as f64)
    })
}

fn gain(grade: u32) -> f64 {
    math::powi(2.0, grade as i32) - 1.0
}

/// Exponential-gain nDCG; 0 when the ideal DCG is 0.
pub fn ndcg_at_k(run: &RunList, qrels: &Qrels, k: usize) -> MetricReport {
    report(Metric::Ndcg, k, run, qrels, |top, grades| {
        let dcg: f64 = top
            .iter()
            .enumerate()
            .map(|(i, d)| gain(grade_of(grades, &d.doc_id)) / math::log2(i as f64 + 2.0))
            .sum();
        let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / math::log2(i as f64 + 2.0))
            .sum();
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    })
}

/// Fraction of relevant documents retrieved within the cutoff.
pub fn recall_at_k(run: &RunList, qrels: &Qrels, k: usize) -> MetricReport {
    report(Metric::Recall, k, run, qrels, |top, grades| {
        let relevant = grades.values().filter(|&&g| g >= 1).count();
        let found = top.iter().filter(|d| grade_of(grades, &d.doc_id) >= 1).count();
        found as f64 / relevant as f64
    })
}

/// The three headline metrics at their default cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub recall_at_1000: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

pub fn summarize(run: &RunList, qrels: &Qrels) -> Summary {
    let mrr = mrr_at_k(run, qrels, 10);
    Summary {
        mrr_at_10: mrr.mean,
        ndcg_at_10: ndcg_at_k(run, qrels, 10).mean,
        recall_at_1000: recall_at_k(run, qrels, 1000).mean,
        evaluated: mrr.per_query.len(),
        skipped: mrr.skipped,
    }
}

/// nDCG@10 on each out-of-domain benchmark, plus the mean over the ones that
/// succeeded. The per-dataset column is always reported alongside the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub datasets: Vec<ZeroShotRow>,
    pub mean_ndcg_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub name: String,
    /// `None` when producing the run failed; such rows are excluded from the mean.
    pub ndcg_at_10: Option<f64>,
    pub error: Option<String>,
}

/// Evaluates one fixed run producer on every `(name, qrels)` pair.
pub fn zero_shot_suite<'a, I, F, E>(datasets: I, mut produce: F) -> Result<ZeroShotReport>
where
    I: IntoIterator<Item = (&'a str, &'a Qrels)>,
    F: FnMut(usize) -> core::result::Result<RunList, E>,
    E: core::fmt::Display,
{
    let mut rows = Vec::new();
    for (i, (name, qrels)) in datasets.into_iter().enumerate() {
        let row = match produce(i) {
            Ok(run) => ZeroShotRow { name: name.into(), ndcg_at_10: Some(ndcg_at_k(&run, qrels, 10).mean), error: None },
            Err(e) => ZeroShotRow { name: name.into(), ndcg_at_10: None, error: Some(alloc::format!("{e}")) },
        };
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid("zero-shot suite needs at least one dataset"));
    }
    let ok: Vec<f64> = rows.iter().filter_map(|r| r.ndcg_at_10).collect();
    let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    Ok(ZeroShotReport { datasets: rows, mean_ndcg_at_10: mean })
}

/// Outcome of one (λ, seed) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub reg: RegWeights,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub mrr_at_10: f64,
    pub flops: f64,
    pub zero_shot_ndcg_at_10: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self { mean, std, n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub reg: RegWeights,
    pub seeds: usize,
    pub failed: usize,
    pub flops: Option<MeanStd>,
    pub mrr_at_10: Option<MeanStd>,
    pub zero_shot_ndcg_at_10: Option<MeanStd>,
}

/// Groups cells by λ pair (first-appearance order) and aggregates over seeds.
pub fn tradeoff_curve(cells: &[CellResult]) -> Vec<TradeoffRow> {
    let mut order: Vec<RegWeights> = Vec::new();
    for c in cells {
        if !order.iter().any(|r| same_reg(r, &c.reg)) {
            order.push(c.reg);
        }
    }
    order
        .into_iter()
        .map(|reg| {
            let group: Vec<&CellResult> = cells.iter().filter(|c| same_reg(&c.reg, &reg)).collect();
            let ok: Vec<&CellMetrics> = group.iter().filter_map(|c| c.metrics.as_ref()).collect();
            let zs: Vec<f64> = ok.iter().filter_map(|m| m.zero_shot_ndcg_at_10).collect();
            TradeoffRow {
                reg,
                seeds: group.len(),
                failed: group.len() - ok.len(),
                flops: MeanStd::of(&ok.iter().map(|m| m.flops).collect::<Vec<_>>()),
                mrr_at_10: MeanStd::of(&ok.iter().map(|m| m.mrr_at_10).collect::<Vec<_>>()),
                zero_shot_ndcg_at_10: MeanStd::of(&zs),
            }
        })
        .collect()
}

fn same_reg(a: &RegWeights, b: &RegWeights) -> bool {
    a.lambda_q.to_bits() == b.lambda_q.to_bits() && a.lambda_d.to_bits() == b.lambda_d.to_bits()
}

pub const TRADEOFF_HEADER: &str =
    "lambda_q,lambda_d,seeds,failed,flops_mean,flops_std,mrr10_mean,mrr10_std,zs_ndcg10_mean,zs_ndcg10_std";

/// CSV with one row per λ pair; missing statistics are written as `NA`.
pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from(TRADEOFF_HEADER);
    out.push('\n');
    let cell = |m: &Option<MeanStd>| match m {
        Some(m) => alloc::format!("{:.6},{:.6}", m.mean, m.std),
        None => String::from("NA,NA"),
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.reg.lambda_q,
            r.reg.lambda_d,
            r.seeds,
            r.failed,
            cell(&r.flops),
            cell(&r.mrr_at_10),
            cell(&r.zero_shot_ndcg_at_10)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn run(q: &str, docs: &[&str]) -> RunList {
        let mut r = RunList::new();
        let n = docs.len();
        r.insert(q, docs.iter().enumerate().map(|(i, d)| ScoredDoc::new(d, (n - i) as f64)).collect())
            .unwrap();
        r
    }

    fn qrels(q: &str, judged: &[(&str, u32)]) -> Qrels {
        let mut qr = Qrels::new();
        for &(d, g) in judged {
            qr.insert(q, d, g);
        }
        qr
    }

    #[test]
    fn mrr_examples() {
        let qr = qrels("q", &[("a", 1)]);
        assert_eq!(mrr_at_k(&run("q", &["a", "b"]), &qr, 10).mean, 1.0);
        assert!((mrr_at_k(&run("q", &["x", "y", "a"]), &qr, 10).mean - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr_at_k(&run("q", &["x", "y", "a"]), &qr, 2).mean, 0.0);
    }

    #[test]
    fn unjudged_queries_are_skipped() {
        let mut r = run("q", &["a"]);
        r.insert("other", vec![ScoredDoc::new("a", 1.0)]).unwrap();
        let rep = mrr_at_k(&r, &qrels("q", &[("a", 1)]), 10);
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.per_query.len(), 1);
        let rep = mrr_at_k(&run("z", &["a"]), &qrels("q", &[("a", 0)]), 10);
        assert_eq!((rep.skipped, rep.per_query.len()), (1, 0));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&run("q", &["a", "b"]), &qrels("q", &[("a", 1)]), 10).mean, 1.0);
        assert_eq!(ndcg_at_k(&run("q", &["x", "y"]), &qrels("q", &[("a", 1)]), 10).mean, 0.0);
        // grades 2 at rank 2, 1 at rank 3; ideal order (2, 1)
        let got = ndcg_at_k(&run("q", &["x", "a", "b"]), &qrels("q", &[("a", 2), ("b", 1)]), 10).mean;
        let dcg = 3.0 / 3f64.log2() + 1.0 / 4f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / idcg).abs() < 1e-15);
    }

    #[test]
    fn recall_examples() {
        let qr = qrels("q", &[("a", 1), ("b", 1), ("c", 1), ("d", 1), ("e", 1)]);
        assert!((recall_at_k(&run("q", &["a", "x", "c", "e"]), &qr, 1000).mean - 0.6).abs() < 1e-15);
        assert_eq!(recall_at_k(&run("q", &["x"]), &qr, 1000).mean, 0.0);
        assert_eq!(recall_at_k(&run("q", &["e", "d", "c", "b", "a"]), &qr, 1000).mean, 1.0);
    }

    #[test]
    fn zero_shot_mean_and_failures() {
        let qr = qrels("q", &[("a", 1)]);
        let good = run("q", &["a"]);
        let rep = zero_shot_suite([("one", &qr)], |_| Ok::<_, &str>(good.clone())).unwrap();
        assert_eq!(rep.mean_ndcg_at_10, 1.0);
        let rep = zero_shot_suite([("a", &qr), ("b", &qr), ("c", &qr)], |i| {
            if i == 1 {
                Err("boom")
            } else if i == 0 {
                Ok(good.clone())
            } else {
                Ok(run("q", &["x", "a"]))
            }
        })
        .unwrap();
        assert_eq!(rep.datasets[1].ndcg_at_10, None);
        let want = (1.0 + 1.0 / 3f64.log2()) / 2.0;
        assert!((rep.mean_ndcg_at_10 - want).abs() < 1e-15);
    }

    #[test]
    fn tradeoff_groups_and_marks_gaps() {
        let reg = |l| RegWeights { lambda_q: l, lambda_d: l };
        let m = |mrr, flops| Some(CellMetrics { mrr_at_10: mrr, flops, zero_shot_ndcg_at_10: None });
        let cells = vec![
            CellResult { reg: reg(1.0), seed: 0, metrics: m(0.5, 3.0), error: None },
            CellResult { reg: reg(1.0), seed: 1, metrics: m(0.5, 3.0), error: None },
            CellResult { reg: reg(2.0), seed: 0, metrics: None, error: Some("x".into()) },
        ];
        let rows = tradeoff_curve(&cells);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mrr_at_10.unwrap().std, 0.0);
        assert_eq!(rows[1].failed, 1);
        let csv = tradeoff_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().contains("NA,NA"));
    }
}
