use std::collections::{BTreeMap, BTreeSet};

use lsr_core::eval::{mrr_at_k, ndcg_at_k, recall_at_k};
use lsr_core::index::InvertedIndex;
use lsr_core::lexical::fuse_sum;
use lsr_core::objectives::{info_nce, margin_mse, PairScores, QueryScores};
use lsr_core::sparse::SparseVec;
use lsr_core::types::{Qrels, RunList, ScoredDoc, TeacherScores};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Coarse weights so that exact score ties actually happen.
fn random_vec(rng: &mut ChaCha8Rng, vocab: u32, nnz: usize) -> SparseVec {
    let pairs: Vec<(u32, f64)> = (0..nnz)
        .map(|_| (rng.random_range(0..vocab), rng.random_range(1..5) as f64 * 0.5))
        .collect();
    let mut dedup = BTreeMap::new();
    for (t, w) in pairs {
        dedup.insert(t, w);
    }
    SparseVec::from_pairs(dedup).unwrap()
}

fn brute_force(docs: &[(String, SparseVec)], q: &SparseVec, k: usize) -> Vec<ScoredDoc> {
    let mut all: Vec<ScoredDoc> = docs
        .iter()
        .map(|(id, d)| {
            // ascending-term accumulation, same as the index
            let mut s = 0.0;
            for (t, w) in q.iter() {
                if let Some(x) = d.get(t) {
                    s += w * x;
                }
            }
            ScoredDoc { doc_id: id.clone(), score: s }
        })
        .filter(|d| d.score > 0.0)
        .collect();
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.doc_id.cmp(&b.doc_id)));
    all.truncate(k);
    all
}

#[test]
fn index_top_k_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let docs: Vec<(String, SparseVec)> =
        (0..1000).map(|i| (format!("d{i:04}"), random_vec(&mut rng, 300, 12))).collect();
    let index = InvertedIndex::build(300, docs.iter().map(|(id, v)| (id.as_str(), v))).unwrap();
    let mut ties = 0;
    for _ in 0..100 {
        let q = random_vec(&mut rng, 300, 8);
        for k in [1, 10, 100] {
            let expected = brute_force(&docs, &q, k);
            ties += expected.windows(2).filter(|w| w[0].score == w[1].score).count();
            assert_eq!(index.retrieve(&q, k), expected);
        }
    }
    assert!(ties > 0, "instance should exercise tie-breaking");
}

#[test]
fn flops_equals_exhaustive_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (nq, nd, vocab) in [(1, 1, 4), (17, 33, 20), (200, 200, 60)] {
        let queries: Vec<SparseVec> = (0..nq).map(|_| random_vec(&mut rng, vocab, 6)).collect();
        let docs: Vec<(String, SparseVec)> =
            (0..nd).map(|i| (format!("d{i:03}"), random_vec(&mut rng, vocab, 9))).collect();
        let index = InvertedIndex::build(vocab as usize, docs.iter().map(|(id, v)| (id.as_str(), v))).unwrap();
        let mut total = 0usize;
        for q in &queries {
            let qs: BTreeSet<u32> = q.terms().iter().copied().collect();
            for (_, d) in &docs {
                total += d.terms().iter().filter(|t| qs.contains(t)).count();
            }
        }
        let exhaustive = total as f64 / (nq * nd) as f64;
        assert!((index.estimate_flops(&queries).unwrap() - exhaustive).abs() <= 1e-12);
    }
}

#[test]
fn flops_hand_example() {
    // p^q = [0.5, 1.0], p^d = [0.2, 0.1]
    let q = vec![SparseVec::from_pairs([(0, 1.0), (1, 1.0)]).unwrap(), SparseVec::from_pairs([(1, 1.0)]).unwrap()];
    let mut docs = vec![SparseVec::new(); 10];
    docs[0] = SparseVec::from_pairs([(0, 1.0), (1, 1.0)]).unwrap();
    docs[1] = SparseVec::from_pairs([(0, 1.0)]).unwrap();
    let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    let index = InvertedIndex::build(2, ids.iter().map(String::as_str).zip(&docs)).unwrap();
    assert!((index.estimate_flops(&q).unwrap() - 0.2).abs() < 1e-15);
}

#[test]
fn info_nce_with_equal_negatives_is_ln_one_plus_k() {
    for k in [1usize, 7, 31] {
        for s in [-3.0, 0.0, 2.5] {
            let (loss, _) = info_nce(&[QueryScores { pos: s, negs: vec![s; k] }]).unwrap();
            assert!((loss - (1.0 + k as f64).ln()).abs() < 1e-9);
        }
    }
}

#[test]
fn margin_mse_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let s = PairScores { pos: rng.random_range(-5.0..5.0), neg: rng.random_range(-5.0..5.0) };
        let t = TeacherScores { pos: rng.random_range(-5.0..5.0), neg: rng.random_range(-5.0..5.0) };
        let (c, u): (f64, f64) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let (base, _) = margin_mse(&[s], &[Some(t)]).unwrap();
        let shifted_s = PairScores { pos: s.pos + c, neg: s.neg + c };
        let shifted_t = TeacherScores { pos: t.pos + u, neg: t.neg + u };
        let (shifted, _) = margin_mse(&[shifted_s], &[Some(shifted_t)]).unwrap();
        assert!((base - shifted).abs() <= 1e-12 * (1.0 + base));
    }
}

struct Case {
    run: RunList,
    qrels: Qrels,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let mut run = RunList::new();
    let mut qrels = Qrels::new();
    for q in 0..rng.random_range(1..5) {
        let qid = format!("q{q}");
        let n = rng.random_range(0..30);
        let mut docs: Vec<ScoredDoc> = (0..n)
            .map(|i| ScoredDoc { doc_id: format!("d{i:02}"), score: rng.random_range(0..6) as f64 })
            .collect();
        docs.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.doc_id.cmp(&b.doc_id)));
        run.insert(qid.clone(), docs).unwrap();
        for d in 0..40 {
            if rng.random_bool(0.1) {
                qrels.insert(qid.clone(), format!("d{d:02}"), rng.random_range(0..4));
            }
        }
    }
    Case { run, qrels }
}

// Independent per-query reference implementations.
fn judged(c: &Case) -> Vec<(&str, &[ScoredDoc], BTreeMap<&str, u32>)> {
    c.run
        .iter()
        .filter_map(|(q, r)| {
            let grades: BTreeMap<&str, u32> = c.qrels.iter().filter(|j| j.0 == q).map(|j| (j.1, j.2)).collect();
            grades.values().any(|&g| g >= 1).then_some((q, r, grades))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn oracle_mrr(c: &Case) -> f64 {
    let per: Vec<f64> = judged(c)
        .iter()
        .map(|(_, r, g)| {
            for (i, d) in r.iter().take(10).enumerate() {
                if g.get(d.doc_id.as_str()).copied().unwrap_or(0) >= 1 {
                    return 1.0 / (i + 1) as f64;
                }
            }
            0.0
        })
        .collect();
    mean(&per)
}

fn oracle_ndcg(c: &Case) -> f64 {
    let per: Vec<f64> = judged(c)
        .iter()
        .map(|(_, r, g)| {
            let gain = |x: u32| 2f64.powi(x as i32) - 1.0;
            let disc = |i: usize| 1.0 / ((i + 2) as f64).log2();
            let dcg: f64 = r
                .iter()
                .take(10)
                .enumerate()
                .map(|(i, d)| gain(g.get(d.doc_id.as_str()).copied().unwrap_or(0)) * disc(i))
                .sum();
            let mut best: Vec<u32> = g.values().copied().collect();
            best.sort_by(|a, b| b.cmp(a));
            let idcg: f64 = best.iter().take(10).enumerate().map(|(i, &x)| gain(x) * disc(i)).sum();
            dcg / idcg
        })
        .collect();
    mean(&per)
}

fn oracle_recall(c: &Case) -> f64 {
    let per: Vec<f64> = judged(c)
        .iter()
        .map(|(_, r, g)| {
            let rel: BTreeSet<&str> = g.iter().filter(|(_, &x)| x >= 1).map(|(d, _)| *d).collect();
            let hit = r.iter().take(1000).filter(|d| rel.contains(d.doc_id.as_str())).count();
            hit as f64 / rel.len() as f64
        })
        .collect();
    mean(&per)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let c = random_case(&mut rng);
        assert_eq!(mrr_at_k(&c.run, &c.qrels, 10).mean, oracle_mrr(&c));
        assert_eq!(recall_at_k(&c.run, &c.qrels, 1000).mean, oracle_recall(&c));
        let got = ndcg_at_k(&c.run, &c.qrels, 10).mean;
        assert!((got - oracle_ndcg(&c)).abs() <= 1e-12, "{got} vs {}", oracle_ndcg(&c));
    }
}

#[test]
fn unjudged_run_queries_are_counted_not_scored() {
    let mut run = RunList::new();
    run.insert("q1", vec![ScoredDoc::new("a", 1.0)]).unwrap();
    run.insert("q2", vec![ScoredDoc::new("a", 1.0)]).unwrap();
    let mut qrels = Qrels::new();
    qrels.insert("q1", "a", 1);
    qrels.insert("q3", "a", 1);
    let r = mrr_at_k(&run, &qrels, 10);
    assert_eq!((r.mean, r.skipped, r.per_query.len()), (1.0, 1, 1));
}

fn random_run(rng: &mut ChaCha8Rng, queries: usize) -> RunList {
    let mut run = RunList::new();
    for q in 0..queries {
        let mut docs = Vec::new();
        for i in 0..20 {
            if rng.random_bool(0.5) {
                docs.push(ScoredDoc { doc_id: format!("d{i:02}"), score: rng.random_range(0..8) as f64 * 0.25 });
            }
        }
        docs.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.doc_id.cmp(&b.doc_id)));
        run.insert(format!("q{q}"), docs).unwrap();
    }
    run
}

#[test]
fn fusion_equals_resorted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let a = random_run(&mut rng, 3);
        let nb = rng.random_range(2..5);
        let b = random_run(&mut rng, nb);
        let k = rng.random_range(1..25);
        let fused = fuse_sum(&a, &b, k, false);
        let mut queries: BTreeSet<&str> = a.query_ids().collect();
        queries.extend(b.query_ids());
        for q in queries {
            let mut sum: BTreeMap<&str, f64> = BTreeMap::new();
            for run in [&a, &b] {
                for d in run.get(q).unwrap_or(&[]) {
                    *sum.entry(d.doc_id.as_str()).or_default() += d.score;
                }
            }
            let mut expected: Vec<ScoredDoc> = sum.into_iter().map(|(d, s)| ScoredDoc::new(d, s)).collect();
            expected.sort_by(|x, y| y.score.partial_cmp(&x.score).unwrap().then(x.doc_id.cmp(&y.doc_id)));
            expected.truncate(k);
            assert_eq!(fused.run.get(q).unwrap_or(&[]), expected.as_slice());
        }
        assert_eq!(fuse_sum(&a, &b, k, false).run, fuse_sum(&b, &a, k, false).run);
    }
}

proptest! {
    #[test]
    fn metrics_are_rank_based(seed in 0u64..500, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng);
        let mut moved = RunList::new();
        for (q, r) in c.run.iter() {
            moved.insert(q, r.iter().map(|d| ScoredDoc::new(&d.doc_id, d.score * scale + shift)).collect()).unwrap();
        }
        prop_assert_eq!(mrr_at_k(&c.run, &c.qrels, 10).mean, mrr_at_k(&moved, &c.qrels, 10).mean);
        prop_assert_eq!(ndcg_at_k(&c.run, &c.qrels, 10).mean, ndcg_at_k(&moved, &c.qrels, 10).mean);
        prop_assert_eq!(recall_at_k(&c.run, &c.qrels, 1000).mean, recall_at_k(&moved, &c.qrels, 1000).mean);
    }

    #[test]
    fn removing_a_posting_never_raises_a_score(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs: Vec<(String, SparseVec)> = (0..30).map(|i| (format!("d{i:02}"), random_vec(&mut rng, 20, 5))).collect();
        let full = InvertedIndex::build(20, docs.iter().map(|(id, v)| (id.as_str(), v))).unwrap();
        let victim = rng.random_range(0..docs.len());
        let mut thinned = docs.clone();
        let kept: Vec<(u32, f64)> = thinned[victim].1.iter().skip(1).collect();
        thinned[victim].1 = SparseVec::from_pairs(kept).unwrap();
        let less = InvertedIndex::build(20, thinned.iter().map(|(id, v)| (id.as_str(), v))).unwrap();
        let q = random_vec(&mut rng, 20, 6);
        let score = |idx: &InvertedIndex| -> BTreeMap<String, f64> {
            idx.retrieve(&q, 100).into_iter().map(|d| (d.doc_id, d.score)).collect()
        };
        let (a, b) = (score(&full), score(&less));
        for (d, s) in &b {
            prop_assert!(*s <= a[d]);
        }
    }
}
