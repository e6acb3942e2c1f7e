use lsr_core::datagen::{generate, GeneratorSpec};
use lsr_core::encoder::{EncoderParams, PoolingMode};
use lsr_core::error::Error;
use lsr_core::mining::{MiningConfig, OracleTeacher};
use lsr_core::objectives::{NegativeSource, RegWeights};
use lsr_core::trainer::*;
use lsr_core::types::{Collection, TeacherScores, Text, TripletRecord};

fn toy() -> (Collection, Collection, Vec<TripletRecord>) {
    let corpus = Collection::new(vec![
        Text::new("a", vec![0, 1, 2]),
        Text::new("b", vec![2, 3]),
        Text::new("c", vec![3, 1, 0, 0]),
    ])
    .unwrap();
    let queries = Collection::new(vec![Text::new("q1", vec![0, 2]), Text::new("q2", vec![3])]).unwrap();
    let t = |pos, neg| Some(TeacherScores { pos, neg });
    let triplets = vec![
        TripletRecord::new("q1", "a", "b", t(2.0, 0.5)).unwrap(),
        TripletRecord::new("q1", "a", "c", t(2.0, -0.3)).unwrap(),
        TripletRecord::new("q2", "b", "a", t(1.1, 0.9)).unwrap(),
    ];
    (corpus, queries, triplets)
}

fn toy_params() -> EncoderParams {
    let mut p = EncoderParams::init(4, 2, 1, 17).unwrap();
    p.bias = vec![0.6, 0.4];
    p
}

// Loss written out independently of the objectives module.
fn oracle_loss(p: &EncoderParams, corpus: &Collection, queries: &Collection, triplets: &[TripletRecord], reg: RegWeights) -> f64 {
    let enc = |t: &Text| p.encode_dense(&t.tokens, PoolingMode::Max).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut qs, mut ds, mut mse) = (Vec::new(), Vec::new(), 0.0);
    let mut negs = Vec::new();
    for t in triplets {
        let q = enc(queries.get(&t.query_id).unwrap());
        let pos = enc(corpus.get(&t.pos_doc_id).unwrap());
        let neg = enc(corpus.get(&t.neg_doc_id).unwrap());
        let teacher = t.teacher.unwrap();
        let diff = (dot(&q, &pos) - dot(&q, &neg)) - (teacher.pos - teacher.neg);
        mse += diff * diff;
        qs.push(q);
        ds.push(pos);
        negs.push(neg);
    }
    ds.extend(negs);
    let flops = |reps: &[Vec<f64>]| {
        (0..reps[0].len())
            .map(|j| {
                let m = reps.iter().map(|r| r[j]).sum::<f64>() / reps.len() as f64;
                m * m
            })
            .sum::<f64>()
    };
    mse / triplets.len() as f64 + reg.lambda_q * flops(&qs) + reg.lambda_d * flops(&ds)
}

#[test]
fn sgd_matches_finite_difference_oracle() {
    let (corpus, queries, triplets) = toy();
    let mut cfg = ScenarioConfig::new(ScenarioName::DistilMSE, RegWeights { lambda_q: 0.05, lambda_d: 0.08 }, 3);
    cfg.steps = 10;
    cfg.batch_size = triplets.len();
    cfg.learning_rate = 0.1;
    cfg.hidden = 1;
    let data = TrainingData { corpus: &corpus, queries: &queries, triplets: &triplets, source: NegativeSource::Bm25 };
    let init = toy_params();
    let (trained, log) = train(&cfg, &data, &init).unwrap();

    let mut oracle = init.clone();
    assert_eq!(log.len(), cfg.steps);
    for (step, entry) in log.iter().enumerate() {
        let ramp_steps = cfg.steps.div_ceil(3) as f64;
        let ramp = (((step + 1) as f64 / ramp_steps).powi(2)).min(1.0);
        let reg = cfg.reg.scaled(ramp);
        let value = oracle_loss(&oracle, &corpus, &queries, &triplets, reg);
        assert!((value - entry.loss).abs() < 1e-9, "step {step}: {value} vs {}", entry.loss);
        let mut grad = Vec::with_capacity(oracle.num_params());
        for i in 0..oracle.num_params() {
            let x = oracle.get_flat(i);
            let h = 1e-6;
            oracle.set_flat(i, x + h);
            let up = oracle_loss(&oracle, &corpus, &queries, &triplets, reg);
            oracle.set_flat(i, x - h);
            let down = oracle_loss(&oracle, &corpus, &queries, &triplets, reg);
            oracle.set_flat(i, x);
            grad.push((up - down) / (2.0 * h));
        }
        for (i, g) in grad.iter().enumerate() {
            oracle.set_flat(i, oracle.get_flat(i) - cfg.learning_rate * g);
        }
    }
    for i in 0..oracle.num_params() {
        assert!((oracle.get_flat(i) - trained.get_flat(i)).abs() < 1e-7, "param {i}");
    }
    assert_ne!(trained, init);
}

#[test]
fn zero_learning_rate_keeps_parameters_bit_exact() {
    let (corpus, queries, triplets) = toy();
    let mut cfg = ScenarioConfig::new(ScenarioName::Splade, RegWeights { lambda_q: 0.1, lambda_d: 0.1 }, 1);
    cfg.steps = 7;
    cfg.learning_rate = 0.0;
    let data = TrainingData { corpus: &corpus, queries: &queries, triplets: &triplets, source: NegativeSource::Bm25 };
    let init = toy_params();
    let (out, log) = train(&cfg, &data, &init).unwrap();
    assert_eq!(out, init);
    assert_eq!(log.len(), 7);
}

#[test]
fn configuration_errors() {
    let (corpus, queries, mut triplets) = toy();
    let reg = RegWeights { lambda_q: 0.0, lambda_d: 0.0 };
    let init = toy_params();
    let cfg = ScenarioConfig { hidden: 1, ..ScenarioConfig::new(ScenarioName::DistilMSE, reg, 1) };
    // negative source must match the scenario
    let wrong = TrainingData { corpus: &corpus, queries: &queries, triplets: &triplets, source: NegativeSource::SelfModel };
    assert!(matches!(train(&cfg, &wrong, &init), Err(Error::Config(_))));
    // MarginMSE without teacher scores
    triplets[1].teacher = None;
    let data = TrainingData { corpus: &corpus, queries: &queries, triplets: &triplets, source: NegativeSource::Bm25 };
    assert!(matches!(train(&cfg, &data, &init), Err(Error::Config(_))));
    // CoCondenser variants start from a pretrained checkpoint
    let mut co = ScenarioConfig::new(ScenarioName::CoCondenserSelfDistil, reg, 1);
    assert!(co.validate().is_ok());
    co.init = InitKind::Random;
    assert!(co.validate().is_err());
}

#[test]
fn ramp_is_quadratic_over_first_third() {
    let mut cfg = ScenarioConfig::new(ScenarioName::Splade, RegWeights { lambda_q: 1.0, lambda_d: 1.0 }, 1);
    cfg.steps = 9;
    let r: Vec<f64> = (0..9).map(|s| cfg.ramp(s)).collect();
    assert_eq!(r[..3], [1.0 / 9.0, 4.0 / 9.0, 1.0]);
    assert!(r[3..].iter().all(|&x| x == 1.0));
}

#[test]
fn pipeline_is_deterministic_and_step2_can_be_disabled() {
    let spec = GeneratorSpec::tiny(4);
    let g = generate(&spec).unwrap();
    let teacher = OracleTeacher::noise_free(&g.truth);
    let data = PipelineData {
        corpus: &g.corpus,
        queries: &g.train_queries,
        qrels: &g.qrels,
        teacher: &teacher,
        input_vocab: spec.input_vocab,
        vocab: spec.vocab,
    };
    let mut cfg = ScenarioConfig::new(ScenarioName::SelfDistil, RegWeights { lambda_q: 0.01, lambda_d: 0.01 }, 5);
    cfg.steps = 30;
    cfg.hidden = 4;
    let mining = MiningConfig { top_k: 10, negatives_per_query: 3, ..MiningConfig::default() };
    let a = run_two_step_self_distil(&cfg, &mining, &data, None, true).unwrap();
    let b = run_two_step_self_distil(&cfg, &mining, &data, None, true).unwrap();
    assert_eq!(a.model(), b.model());
    assert_eq!(a.step2.as_ref().unwrap().mined, b.step2.as_ref().unwrap().mined);

    let off = run_two_step_self_distil(&cfg, &mining, &data, None, false).unwrap();
    assert!(off.step2.is_none());
    let distil = ScenarioConfig { name: ScenarioName::DistilMSE, ..cfg.clone() };
    let init = cfg.fresh_params(spec.input_vocab, spec.vocab).unwrap();
    let direct = train_on_bm25(&distil, &mining, &data, &init).unwrap();
    assert_eq!(off.model(), &direct.params);
    assert_eq!(off.step1.mined.triplets, direct.mined.triplets);
    assert_eq!(off.step1_digest, direct.params.digest_hex());
}

#[test]
fn span_pretraining_separates_held_out_documents() {
    let spec = GeneratorSpec { topics: 2, ..GeneratorSpec::tiny(6) };
    let g = generate(&spec).unwrap();
    let (train_docs, held_out) = g.corpus.items().split_at(200);
    let train_docs = Collection::new(train_docs.to_vec()).unwrap();
    let held_out = Collection::new(held_out.to_vec()).unwrap();
    let init = EncoderParams::init(200, 200, 8, 2).unwrap();
    let cfg = PretrainConfig { steps: 150, ..PretrainConfig::default() };
    let out = pretrain_contrastive_spans(&train_docs, &init, &cfg).unwrap();
    assert_eq!(out.excluded, 0);
    assert!(out.losses.iter().all(|l| l.is_finite()));
    let (same, cross) = span_similarity(&out.params, PoolingMode::Max, &held_out).unwrap();
    assert!(same > cross, "{same} vs {cross}");
    assert_eq!(out, pretrain_contrastive_spans(&train_docs, &init, &cfg).unwrap());

    let single = Collection::new(vec![Text::new("only", vec![1, 2, 3, 4])]).unwrap();
    assert!(matches!(pretrain_contrastive_spans(&single, &init, &cfg), Err(Error::Config(_))));
}

#[test]
fn sweep_covers_grid_and_records_failures() {
    let template = ScenarioConfig::new(ScenarioName::Splade, RegWeights { lambda_q: 0.0, lambda_d: 0.0 }, 0);
    let spec = SweepSpec::default();
    let cells = sweep(&template, &spec, |c| {
        if c.seed == 2 && c.reg.lambda_d > 0.2 {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        Ok(lsr_core::eval::CellMetrics { mrr_at_10: c.reg.lambda_d, flops: c.seed as f64, zero_shot_ndcg_at_10: None })
    })
    .unwrap();
    assert_eq!(cells.len(), 15);
    assert_eq!(cells.iter().filter(|c| c.error.is_some()).count(), 1);
    let rows = lsr_core::eval::tradeoff_curve(&cells);
    assert_eq!(rows.len(), 5);
}
