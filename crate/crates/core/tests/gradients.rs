//! Analytic gradients against central finite differences.

use lsr_core::encoder::{EncoderParams, PoolingMode};
use lsr_core::objectives::*;
use lsr_core::types::TeacherScores;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn rand_vecs(rng: &mut ChaCha8Rng, n: usize, dim: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

/// Weighted pooled output, the scalar whose gradient is checked.
fn objective(p: &EncoderParams, tokens: &[u32], mode: PoolingMode, up: &[f64]) -> f64 {
    p.encode_dense(tokens, mode).unwrap().iter().zip(up).map(|(a, b)| a * b).sum()
}

fn check_encoder(mode: PoolingMode, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EncoderParams::init(12, 30, 5, seed).unwrap();
    // larger weights give non-trivial attention and mostly positive logits
    for block in p.blocks_mut() {
        for w in block.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
    }
    let tokens = [3u32, 7, 1, 3, 11, 0, 5, 8];
    let up: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = p.encode_backward(&tokens, mode, &up).unwrap();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for idx in 0..p.num_params() {
        let x = p.get_flat(idx);
        let num = central(
            |v| {
                let mut q = p.clone();
                q.set_flat(idx, v);
                objective(&q, &tokens, mode, &up)
            },
            x,
        );
        let ana = g.get_flat(idx);
        // skip coordinates where a max-pool argmax or ReLU kink sits inside the stencil
        let kink = {
            let mut lo = p.clone();
            lo.set_flat(idx, x - STEP);
            let mut hi = p.clone();
            hi.set_flat(idx, x + STEP);
            let gl = lo.encode_backward(&tokens, mode, &up).unwrap().get_flat(idx);
            let gh = hi.encode_backward(&tokens, mode, &up).unwrap().get_flat(idx);
            rel_err(gl, gh) > 1e-2 && (gl - gh).abs() > 1e-6
        };
        if kink {
            continue;
        }
        if num == 0.0 && ana == 0.0 {
            continue;
        }
        checked += 1;
        worst = worst.max(rel_err(num, ana));
    }
    (checked, worst)
}

#[test]
fn encoder_max_pooling_gradient() {
    let (n, worst) = check_encoder(PoolingMode::Max, 1);
    assert!(n >= 100, "only {n} coordinates checked");
    eprintln!("{n} coordinates, worst {worst:e}");
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn encoder_sum_pooling_gradient() {
    let (n, worst) = check_encoder(PoolingMode::Sum, 2);
    assert!(n >= 100, "only {n} coordinates checked");
    eprintln!("{n} coordinates, worst {worst:e}");
    assert!(worst < TOL, "worst relative error {worst}");
}

/// Checks `analytic` against finite differences of `f` over every coordinate of `x`.
fn check_vec(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> (usize, f64) {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let num = central(
            |v| {
                let mut y = x.to_vec();
                y[i] = v;
                f(&y)
            },
            x[i],
        );
        worst = worst.max(rel_err(num, analytic[i]));
    }
    (x.len(), worst)
}

#[test]
fn info_nce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, k) = (8, 15);
    let flat: Vec<f64> = (0..n * (k + 1)).map(|_| rng.random_range(-3.0..3.0)).collect();
    let unpack = |v: &[f64]| -> Vec<QueryScores> {
        v.chunks(k + 1).map(|c| QueryScores { pos: c[0], negs: c[1..].to_vec() }).collect()
    };
    let (_, grads) = info_nce(&unpack(&flat)).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| std::iter::once(g.pos).chain(g.negs.iter().copied())).collect();
    let (n, worst) = check_vec(&flat, &analytic, |v| info_nce(&unpack(v)).unwrap().0);
    assert!(n >= 100 && worst < TOL, "{n} coords, worst {worst}");
}

#[test]
fn margin_mse_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 60;
    let flat: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let teacher: Vec<Option<TeacherScores>> =
        (0..n).map(|_| Some(TeacherScores { pos: rng.random_range(0.0..10.0), neg: rng.random_range(0.0..10.0) })).collect();
    let unpack = |v: &[f64]| -> Vec<PairScores> { v.chunks(2).map(|c| PairScores { pos: c[0], neg: c[1] }).collect() };
    let (_, grads) = margin_mse(&unpack(&flat), &teacher).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|&(a, b)| [a, b]).collect();
    let (n, worst) = check_vec(&flat, &analytic, |v| margin_mse(&unpack(v), &teacher).unwrap().0);
    assert!(n >= 100 && worst < TOL, "{n} coords, worst {worst}");
}

#[test]
fn flops_reg_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, dim) = (6, 25);
    let flat: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..2.0)).collect();
    let value = |v: &[f64]| {
        let reps: Vec<&[f64]> = v.chunks(dim).collect();
        flops_reg(&reps).unwrap()
    };
    let (_, shared) = value(&flat);
    let analytic: Vec<f64> = (0..n).flat_map(|_| shared.iter().copied()).collect();
    let (n, worst) = check_vec(&flat, &analytic, |v| value(v).0);
    assert!(n >= 100 && worst < TOL, "{n} coords, worst {worst}");
}

fn check_combined(loss: RankingLoss) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, dim) = (4, 12);
    let q = rand_vecs(&mut rng, n, dim, 0.0, 1.5);
    let p = rand_vecs(&mut rng, n, dim, 0.0, 1.5);
    let d = rand_vecs(&mut rng, n, dim, 0.0, 1.5);
    let teacher: Vec<Option<TeacherScores>> =
        (0..n).map(|_| Some(TeacherScores { pos: rng.random_range(0.0..5.0), neg: rng.random_range(0.0..5.0) })).collect();
    let reg = RegWeights { lambda_q: 0.3, lambda_d: 0.7 };
    let flat: Vec<f64> = q.iter().chain(&p).chain(&d).flatten().copied().collect();
    let value = |v: &[f64]| {
        let rows: Vec<Vec<f64>> = v.chunks(dim).map(<[f64]>::to_vec).collect();
        let reps = TripletReps { queries: &rows[..n], positives: &rows[n..2 * n], negatives: &rows[2 * n..], teacher: &teacher };
        combined_loss(loss, NegativeSource::Bm25, reg, &reps).unwrap()
    };
    let out = value(&flat);
    assert!((out.total - (out.ranking + reg.lambda_q * out.flops_q + reg.lambda_d * out.flops_d)).abs() < 1e-12);
    let analytic: Vec<f64> =
        out.grad_queries.iter().chain(&out.grad_positives).chain(&out.grad_negatives).flatten().copied().collect();
    let (n, worst) = check_vec(&flat, &analytic, |v| value(v).total);
    assert!(n >= 100 && worst < TOL, "{loss:?}: {n} coords, worst {worst}");
}

#[test]
fn combined_info_nce_gradient() {
    check_combined(RankingLoss::InfoNce);
}

#[test]
fn combined_margin_mse_gradient() {
    check_combined(RankingLoss::MarginMse);
}

#[test]
fn span_contrastive_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, dim) = (5, 12);
    let flat: Vec<f64> = (0..2 * n * dim).map(|_| rng.random_range(0.0..1.5)).collect();
    let split = |v: &[f64]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let rows: Vec<Vec<f64>> = v.chunks(dim).map(<[f64]>::to_vec).collect();
        (rows[..n].to_vec(), rows[n..].to_vec())
    };
    let (a, s) = split(&flat);
    let (_, ga, gs) = span_contrastive_loss(&a, &s).unwrap();
    let analytic: Vec<f64> = ga.iter().chain(&gs).flatten().copied().collect();
    let (n, worst) = check_vec(&flat, &analytic, |v| {
        let (a, s) = split(v);
        span_contrastive_loss(&a, &s).unwrap().0
    });
    assert!(n >= 100 && worst < TOL, "{n} coords, worst {worst}");
}
