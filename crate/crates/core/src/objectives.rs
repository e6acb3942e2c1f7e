//! Ranking losses and the FLOPS sparsity regularizer.
//!
//! Every function returns the loss together with its exact gradient, either
//! with respect to scores (ranking losses) or to pooled representations
//! (regularizer and [`combined_loss`]).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};
use crate::math;
use crate::types::TeacherScores;

/// Regularization strengths for query and document representations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub lambda_q: f64,
    pub lambda_d: f64,
}

impl RegWeights {
    pub fn new(lambda_q: f64, lambda_d: f64) -> Result<Self> {
        let w = Self { lambda_q, lambda_d };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_q", self.lambda_q), ("lambda_d", self.lambda_d)] {
            if !l.is_finite() || l < 0.0 {
                return Err(invalid(alloc::format!("{name} = {l} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { lambda_q: self.lambda_q * factor, lambda_d: self.lambda_d * factor }
    }
}

/// Scores for one query: the positive, then negatives (hard negative first).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores {
    pub pos: f64,
    pub negs: Vec<f64>,
}

/// Per-score gradient, same layout as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScoreGrads {
    pub pos: f64,
    pub negs: Vec<f64>,
}

/// Mean over queries of `-ln(e^{s+} / (e^{s+} + Σ e^{s-}))`.
///
/// Gradients are softmax residuals divided by the batch size.
pub fn info_nce(batch: &[QueryScores]) -> Result<(f64, Vec<QueryScoreGrads>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    let mut all = Vec::new();
    for qs in batch {
        if qs.negs.is_empty() {
            return Err(invalid("every query needs at least one negative"));
        }
        if !qs.pos.is_finite() || qs.negs.iter().any(|s| !s.is_finite()) {
            return Err(invalid("non-finite score"));
        }
        all.clear();
        all.push(qs.pos);
        all.extend_from_slice(&qs.negs);
        let lse = math::log_sum_exp(&all);
        loss += lse - qs.pos;
        let soft = |s: f64| math::exp(s - lse) / n;
        grads.push(QueryScoreGrads {
            pos: soft(qs.pos) - 1.0 / n,
            negs: qs.negs.iter().map(|&s| soft(s)).collect(),
        });
    }
    Ok((loss / n, grads))
}

/// Student scores for one `(q, d+, d-)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub pos: f64,
    pub neg: f64,
}

/// Mean over pairs of `((s+ - s-) - (t+ - t-))²`.
///
/// Returns gradients `(∂/∂s+, ∂/∂s-)` per pair.
pub fn margin_mse(student: &[PairScores], teacher: &[Option<TeacherScores>]) -> Result<(f64, Vec<(f64, f64)>)> {
    if student.is_empty() {
        return Err(invalid("empty batch"));
    }
    if student.len() != teacher.len() {
        return Err(invalid("student and teacher batch sizes differ"));
    }
    let n = student.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for (s, t) in student.iter().zip(teacher) {
        let t = t.ok_or_else(|| invalid("MarginMSE needs teacher scores for every pair"))?;
        let resid = (s.pos - s.neg) - (t.pos - t.neg);
        if !resid.is_finite() {
            return Err(invalid("non-finite margin"));
        }
        loss += resid * resid;
        let g = 2.0 * resid / n;
        grads.push((g, -g));
    }
    Ok((loss / n, grads))
}

/// `Σ_j (mean_n w_nj)²` over a batch of dense non-negative representations.
///
/// The gradient for every item is `2 ā_j / N`, returned once (it is shared).
pub fn flops_reg(reps: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    let Some(first) = reps.first() else {
        return Ok((0.0, Vec::new()));
    };
    let dim = first.len();
    let n = reps.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in reps {
        if r.len() != dim {
            return Err(invalid("representations have different lengths"));
        }
        for (m, &w) in mean.iter_mut().zip(r.iter()) {
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(alloc::format!("activation {w} must be finite and >= 0")));
            }
            *m += w;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let loss = mean.iter().map(|m| m * m).sum();
    let grad = mean.iter().map(|m| 2.0 * m / n).collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankingLoss {
    InfoNce,
    MarginMse,
}

/// Where the hard negatives of a batch came from. The loss itself does not
/// depend on it; it is carried through for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeSource {
    Bm25,
    SelfModel,
    Ensemble,
    /// Contrastive span pre-training: negatives are other documents' spans.
    Spans,
}

/// Dense pooled representations of one triplet batch.
pub struct TripletReps<'a> {
    pub queries: &'a [Vec<f64>],
    pub positives: &'a [Vec<f64>],
    pub negatives: &'a [Vec<f64>],
    pub teacher: &'a [Option<TeacherScores>],
}

/// Value and gradients of `ranking + λ_q·FLOPS(q) + λ_d·FLOPS(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub ranking: f64,
    /// Unweighted regularizer values.
    pub flops_q: f64,
    pub flops_d: f64,
    pub source: NegativeSource,
    pub grad_queries: Vec<Vec<f64>>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    if alpha != 0.0 {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += alpha * s;
        }
    }
}

/// Full training objective on a batch of `(q, d+, d-)` representations.
///
/// * InfoNCE: for query `i` the candidates are `d+_i`, then `d-_i`, then the
///   positive and negative documents of every other query in ascending order.
/// * MarginMSE: triplet margins only, no in-batch negatives.
///
/// Document regularization covers every document in the batch.
pub fn combined_loss(
    loss: RankingLoss,
    source: NegativeSource,
    reg: RegWeights,
    reps: &TripletReps<'_>,
) -> Result<CombinedLoss> {
    reg.validate()?;
    let n = reps.queries.len();
    if n == 0 || reps.positives.len() != n || reps.negatives.len() != n {
        return Err(invalid("batch must hold the same non-zero number of queries, positives and negatives"));
    }
    let dim = reps.queries[0].len();
    let mut grad_queries = vec![vec![0.0; dim]; n];
    let mut grad_positives = vec![vec![0.0; dim]; n];
    let mut grad_negatives = vec![vec![0.0; dim]; n];

    let ranking = match loss {
        RankingLoss::InfoNce => {
            let mut batch = Vec::with_capacity(n);
            for i in 0..n {
                let q = &reps.queries[i];
                let mut negs = Vec::with_capacity(2 * n - 1);
                negs.push(dense_dot(q, &reps.negatives[i]));
                for j in (0..n).filter(|&j| j != i) {
                    negs.push(dense_dot(q, &reps.positives[j]));
                    negs.push(dense_dot(q, &reps.negatives[j]));
                }
                batch.push(QueryScores { pos: dense_dot(q, &reps.positives[i]), negs });
            }
            let (value, grads) = info_nce(&batch)?;
            for (i, g) in grads.iter().enumerate() {
                let q = &reps.queries[i];
                axpy(&mut grad_queries[i], g.pos, &reps.positives[i]);
                axpy(&mut grad_positives[i], g.pos, q);
                axpy(&mut grad_queries[i], g.negs[0], &reps.negatives[i]);
                axpy(&mut grad_negatives[i], g.negs[0], q);
                let mut slot = 1;
                for j in (0..n).filter(|&j| j != i) {
                    let (gp, gn) = (g.negs[slot], g.negs[slot + 1]);
                    slot += 2;
                    axpy(&mut grad_queries[i], gp, &reps.positives[j]);
                    axpy(&mut grad_positives[j], gp, q);
                    axpy(&mut grad_queries[i], gn, &reps.negatives[j]);
                    axpy(&mut grad_negatives[j], gn, q);
                }
            }
            value
        }
        RankingLoss::MarginMse => {
            if reps.teacher.len() != n || reps.teacher.iter().any(Option::is_none) {
                return Err(config("MarginMSE requires teacher scores on every triplet"));
            }
            let student: Vec<PairScores> = (0..n)
                .map(|i| PairScores {
                    pos: dense_dot(&reps.queries[i], &reps.positives[i]),
                    neg: dense_dot(&reps.queries[i], &reps.negatives[i]),
                })
                .collect();
            let (value, grads) = margin_mse(&student, reps.teacher)?;
            for (i, &(gp, gn)) in grads.iter().enumerate() {
                let q = &reps.queries[i];
                axpy(&mut grad_queries[i], gp, &reps.positives[i]);
                axpy(&mut grad_queries[i], gn, &reps.negatives[i]);
                axpy(&mut grad_positives[i], gp, q);
                axpy(&mut grad_negatives[i], gn, q);
            }
            value
        }
    };

    let qs: Vec<&[f64]> = reps.queries.iter().map(Vec::as_slice).collect();
    let (flops_q, gq) = flops_reg(&qs)?;
    let ds: Vec<&[f64]> = reps.positives.iter().chain(reps.negatives).map(Vec::as_slice).collect();
    let (flops_d, gd) = flops_reg(&ds)?;
    for g in &mut grad_queries {
        axpy(g, reg.lambda_q, &gq);
    }
    for g in grad_positives.iter_mut().chain(grad_negatives.iter_mut()) {
        axpy(g, reg.lambda_d, &gd);
    }

    Ok(CombinedLoss {
        total: ranking + reg.lambda_q * flops_q + reg.lambda_d * flops_d,
        ranking,
        flops_q,
        flops_d,
        source,
        grad_queries,
        grad_positives,
        grad_negatives,
    })
}

/// Loss plus gradients for anchors and siblings.
pub type SpanLoss = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// InfoNCE over `(anchor, sibling)` span pairs: each anchor's positive is its
/// sibling; every other document's two spans are negatives.
pub fn span_contrastive_loss(anchors: &[Vec<f64>], siblings: &[Vec<f64>]) -> Result<SpanLoss> {
    let n = anchors.len();
    if n < 2 {
        return Err(config("span contrastive loss needs at least 2 documents per batch"));
    }
    if siblings.len() != n {
        return Err(invalid("anchor and sibling counts differ"));
    }
    let mut batch = Vec::with_capacity(n);
    for i in 0..n {
        let a = &anchors[i];
        let mut negs = Vec::with_capacity(2 * (n - 1));
        for j in (0..n).filter(|&j| j != i) {
            negs.push(dense_dot(a, &anchors[j]));
            negs.push(dense_dot(a, &siblings[j]));
        }
        batch.push(QueryScores { pos: dense_dot(a, &siblings[i]), negs });
    }
    let (value, grads) = info_nce(&batch)?;
    let dim = anchors[0].len();
    let mut ga = vec![vec![0.0; dim]; n];
    let mut gs = vec![vec![0.0; dim]; n];
    for (i, g) in grads.iter().enumerate() {
        axpy(&mut ga[i], g.pos, &siblings[i]);
        axpy(&mut gs[i], g.pos, &anchors[i]);
        let mut slot = 0;
        for j in (0..n).filter(|&j| j != i) {
            let (g_anchor, g_sib) = (g.negs[slot], g.negs[slot + 1]);
            slot += 2;
            let (ai, aj) = (anchors[i].clone(), &anchors[j]);
            axpy(&mut ga[i], g_anchor, aj);
            axpy(&mut ga[j], g_anchor, &ai);
            axpy(&mut ga[i], g_sib, &siblings[j]);
            axpy(&mut gs[j], g_sib, &ai);
        }
    }
    Ok((value, ga, gs))
}
