//! Training scenarios: the SGD loop with a ramped FLOPS penalty, contrastive
//! span pre-training, the two-step self-distillation pipeline, ensemble
//! distillation and the λ × seed sweep.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Forward, PoolingMode};
use crate::error::{config, invalid, Error, Result};
use crate::eval::{summarize, CellMetrics, CellResult, Summary};
use crate::math::{derive_seed, sqrt};
use crate::mining::{
    encode_collection, mine_bm25, mine_ensemble, mine_self, Bm25Retriever, Mined, MiningConfig, Retriever,
    SparseRetriever, Teacher,
};
use crate::objectives::{combined_loss, span_contrastive_loss, NegativeSource, RankingLoss, RegWeights, TripletReps};
use crate::types::{Collection, Qrels, TeacherScores, Text, TripletRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "SPLADE")]
    Splade,
    DistilMSE,
    SelfDistil,
    EnsembleDistil,
    #[serde(rename = "CoCondenser-SelfDistil")]
    CoCondenserSelfDistil,
    #[serde(rename = "CoCondenser-EnsembleDistil")]
    CoCondenserEnsembleDistil,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        Self::Splade,
        Self::DistilMSE,
        Self::SelfDistil,
        Self::EnsembleDistil,
        Self::CoCondenserSelfDistil,
        Self::CoCondenserEnsembleDistil,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Splade => "SPLADE",
            Self::DistilMSE => "DistilMSE",
            Self::SelfDistil => "SelfDistil",
            Self::EnsembleDistil => "EnsembleDistil",
            Self::CoCondenserSelfDistil => "CoCondenser-SelfDistil",
            Self::CoCondenserEnsembleDistil => "CoCondenser-EnsembleDistil",
        }
    }

    pub fn loss(self) -> RankingLoss {
        match self {
            Self::Splade => RankingLoss::InfoNce,
            _ => RankingLoss::MarginMse,
        }
    }

    /// Where the final model's training negatives come from.
    pub fn negatives(self) -> NegativeSource {
        match self {
            Self::Splade | Self::DistilMSE => NegativeSource::Bm25,
            Self::SelfDistil | Self::CoCondenserSelfDistil => NegativeSource::SelfModel,
            Self::EnsembleDistil | Self::CoCondenserEnsembleDistil => NegativeSource::Ensemble,
        }
    }

    pub fn init(self) -> InitKind {
        match self {
            Self::CoCondenserSelfDistil | Self::CoCondenserEnsembleDistil => InitKind::PretrainedCheckpoint,
            _ => InitKind::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    Random,
    PretrainedCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub reg: RegWeights,
    #[serde(default)]
    pub pooling: PoolingMode,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init: InitKind,
    pub hidden: usize,
}

/// SGD step size per loss. MarginMSE gradients against a unit-scale teacher are
/// much smaller than InfoNCE ones, so it needs a larger step.
pub fn default_learning_rate(loss: RankingLoss) -> f64 {
    match loss {
        RankingLoss::InfoNce => 1.0,
        RankingLoss::MarginMse => 3.0,
    }
}

impl ScenarioConfig {
    pub fn new(name: ScenarioName, reg: RegWeights, seed: u64) -> Self {
        Self {
            name,
            reg,
            pooling: PoolingMode::Max,
            seed,
            steps: 1000,
            batch_size: 32,
            learning_rate: default_learning_rate(name.loss()),
            init: name.init(),
            hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(config("steps, batch_size and hidden must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(config("learning_rate must be a non-negative number"));
        }
        if self.name.init() == InitKind::PretrainedCheckpoint && self.init != InitKind::PretrainedCheckpoint {
            return Err(config(format!("scenario {} requires a pretrained checkpoint", self.name.label())));
        }
        Ok(())
    }

    /// λ multiplier at `step`: quadratic ramp over the first third of training.
    pub fn ramp(&self, step: usize) -> f64 {
        let ramp_steps = self.steps.div_ceil(3);
        let t = (step + 1) as f64 / ramp_steps as f64;
        if t >= 1.0 {
            1.0
        } else {
            t * t
        }
    }

    pub fn fresh_params(&self, input_vocab: usize, vocab: usize) -> Result<EncoderParams> {
        EncoderParams::init(input_vocab, vocab, self.hidden, derive_seed(self.seed, &["init"]))
    }
}

/// Everything `train` reads besides the configuration and initial weights.
pub struct TrainingData<'a> {
    pub corpus: &'a Collection,
    pub queries: &'a Collection,
    pub triplets: &'a [TripletRecord],
    pub source: NegativeSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub rank_loss: f64,
    pub flops_q: f64,
    pub flops_d: f64,
    /// Effective (ramped) weights used at this step.
    pub lambda_q: f64,
    pub lambda_d: f64,
}

pub const LOG_HEADER: &str = "step,loss,rank_loss,flops_q,flops_d";

struct Resolved<'a> {
    query: &'a Text,
    pos: &'a Text,
    neg: &'a Text,
    teacher: Option<TeacherScores>,
}

fn resolve<'a>(data: &TrainingData<'a>, use_teacher: bool) -> Result<Vec<Resolved<'a>>> {
    data.triplets
        .iter()
        .map(|t| {
            let lookup = |c: &'a Collection, id: &str| c.get(id).ok_or_else(|| invalid(format!("triplet references unknown id {id}")));
            if use_teacher && t.teacher.is_none() {
                return Err(config("distillation scenarios need teacher scores on every triplet"));
            }
            Ok(Resolved {
                query: lookup(data.queries, &t.query_id)?,
                pos: lookup(data.corpus, &t.pos_doc_id)?,
                neg: lookup(data.corpus, &t.neg_doc_id)?,
                teacher: if use_teacher { t.teacher } else { None },
            })
        })
        .collect()
}

/// Yields fixed-size batches of indices, reshuffling at every epoch boundary.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Mini-batch SGD on `ranking + λ_q·FLOPS(q) + λ_d·FLOPS(d)` with ramped λ.
pub fn train(cfg: &ScenarioConfig, data: &TrainingData<'_>, init: &EncoderParams) -> Result<(EncoderParams, Vec<LogRow>)> {
    cfg.validate()?;
    init.validate()?;
    if data.source != cfg.name.negatives() {
        return Err(config(format!(
            "scenario {} cannot train on {:?} negatives",
            cfg.name.label(),
            data.source
        )));
    }
    let loss = cfg.name.loss();
    let triplets = resolve(data, loss == RankingLoss::MarginMse)?;
    if triplets.is_empty() {
        return Err(invalid("no training triplets"));
    }
    let batch_size = cfg.batch_size.min(triplets.len());

    let mut params = init.clone();
    let mut grads = params.zeros_like();
    let mut batcher = Batcher::new(triplets.len(), derive_seed(cfg.seed, &["batches"]));
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = batcher.next(batch_size);
        let fwd = |t: &Text| params.forward(&t.tokens);
        let mut fq: Vec<Forward> = Vec::with_capacity(batch.len());
        let mut fp: Vec<Forward> = Vec::with_capacity(batch.len());
        let mut fn_: Vec<Forward> = Vec::with_capacity(batch.len());
        let mut teacher = Vec::with_capacity(batch.len());
        for &i in &batch {
            let t = &triplets[i];
            fq.push(fwd(t.query)?);
            fp.push(fwd(t.pos)?);
            fn_.push(fwd(t.neg)?);
            teacher.push(t.teacher);
        }
        let pool = |fs: &[Forward]| fs.iter().map(|f| f.pooled(cfg.pooling)).collect::<Vec<_>>();
        let (qs, ps, ns) = (pool(&fq), pool(&fp), pool(&fn_));
        let reg = cfg.reg.scaled(cfg.ramp(step));
        let reps = TripletReps { queries: &qs, positives: &ps, negatives: &ns, teacher: &teacher };
        let out = combined_loss(loss, data.source, reg, &reps)?;
        if !out.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        log.push(LogRow {
            step,
            loss: out.total,
            rank_loss: out.ranking,
            flops_q: out.flops_q,
            flops_d: out.flops_d,
            lambda_q: reg.lambda_q,
            lambda_d: reg.lambda_d,
        });
        if cfg.learning_rate == 0.0 {
            continue;
        }
        grads.fill_zero();
        for (f, g) in fq.iter().zip(&out.grad_queries) {
            params.backward(f, cfg.pooling, g, &mut grads)?;
        }
        for (f, g) in fp.iter().zip(&out.grad_positives) {
            params.backward(f, cfg.pooling, g, &mut grads)?;
        }
        for (f, g) in fn_.iter().zip(&out.grad_negatives) {
            params.backward(f, cfg.pooling, g, &mut grads)?;
        }
        params.add_scaled(-cfg.learning_rate, &grads);
    }
    Ok((params, log))
}

/// Training log as CSV with header [`LOG_HEADER`].
pub fn log_csv(log: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&format!("{},{:.9},{:.9},{:.9},{:.9}\n", r.step, r.loss, r.rank_loss, r.flops_q, r.flops_d));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub pooling: PoolingMode,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 300, batch_size: 32, learning_rate: 1.0, pooling: PoolingMode::Max, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    /// Documents shorter than 2 tokens.
    pub excluded: usize,
    pub losses: Vec<f64>,
}

/// Splits a document into two disjoint halves.
pub fn spans(tokens: &[u32]) -> Option<(&[u32], &[u32])> {
    (tokens.len() >= 2).then(|| tokens.split_at(tokens.len() / 2))
}

/// Contrastive pre-training: a document's two halves are positives for each
/// other; the other documents' halves in the batch are negatives.
pub fn pretrain_contrastive_spans(corpus: &Collection, init: &EncoderParams, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    init.validate()?;
    let docs: Vec<(&[u32], &[u32])> = corpus.iter().filter_map(|d| spans(&d.tokens)).collect();
    let excluded = corpus.len() - docs.len();
    let batch_size = cfg.batch_size.min(docs.len());
    if batch_size < 2 {
        return Err(config("span pre-training needs at least 2 documents per batch"));
    }
    let mut params = init.clone();
    let mut grads = params.zeros_like();
    let mut batcher = Batcher::new(docs.len(), derive_seed(cfg.seed, &["pretrain"]));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = batcher.next(batch_size);
        let mut fa = Vec::with_capacity(batch.len());
        let mut fs = Vec::with_capacity(batch.len());
        for &i in &batch {
            fa.push(params.forward(docs[i].0)?);
            fs.push(params.forward(docs[i].1)?);
        }
        let anchors: Vec<Vec<f64>> = fa.iter().map(|f| f.pooled(cfg.pooling)).collect();
        let siblings: Vec<Vec<f64>> = fs.iter().map(|f| f.pooled(cfg.pooling)).collect();
        let (loss, ga, gs) = span_contrastive_loss(&anchors, &siblings)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(loss);
        grads.fill_zero();
        for (f, g) in fa.iter().zip(&ga).chain(fs.iter().zip(&gs)) {
            params.backward(f, cfg.pooling, g, &mut grads)?;
        }
        params.add_scaled(-cfg.learning_rate, &grads);
    }
    Ok(PretrainOutcome { params, excluded, losses })
}

/// Inputs shared by the multi-stage pipelines.
pub struct PipelineData<'a> {
    pub corpus: &'a Collection,
    pub queries: &'a Collection,
    pub qrels: &'a Qrels,
    pub teacher: &'a dyn Teacher,
    pub input_vocab: usize,
    pub vocab: usize,
}

pub struct StageOutcome {
    pub params: EncoderParams,
    pub log: Vec<LogRow>,
    pub mined: Mined,
}

/// Initial weights for a scenario: fresh, or the given pretrained checkpoint.
pub fn initial_params(cfg: &ScenarioConfig, data: &PipelineData<'_>, pretrained: Option<&EncoderParams>) -> Result<EncoderParams> {
    match (cfg.init, pretrained) {
        (InitKind::Random, _) => cfg.fresh_params(data.input_vocab, data.vocab),
        (InitKind::PretrainedCheckpoint, Some(p)) => Ok(p.clone()),
        (InitKind::PretrainedCheckpoint, None) => Err(config("scenario needs a pretrained checkpoint")),
    }
}

/// Mines BM25 negatives and trains the scenario on them.
pub fn train_on_bm25(
    cfg: &ScenarioConfig,
    mining: &MiningConfig,
    data: &PipelineData<'_>,
    init: &EncoderParams,
) -> Result<StageOutcome> {
    let mining = MiningConfig { source: NegativeSource::Bm25, ..mining.clone() };
    let teacher = (cfg.name.loss() == RankingLoss::MarginMse).then_some(data.teacher);
    let mined = mine_bm25(data.corpus, data.queries, data.qrels, &mining, teacher)?;
    let td = TrainingData { corpus: data.corpus, queries: data.queries, triplets: &mined.triplets, source: NegativeSource::Bm25 };
    let (params, log) = train(cfg, &td, init)?;
    Ok(StageOutcome { params, log, mined })
}

/// The step-1 configuration of a two-step scenario: DistilMSE with the same
/// settings and initialization.
pub fn step1_config(cfg: &ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig { name: ScenarioName::DistilMSE, ..cfg.clone() }
}

/// Step 2 of self-distillation: mine with `step1`, score with the teacher,
/// retrain from `init`.
pub fn self_distil_step2(
    cfg: &ScenarioConfig,
    mining: &MiningConfig,
    data: &PipelineData<'_>,
    step1: &EncoderParams,
    init: &EncoderParams,
) -> Result<StageOutcome> {
    let mining = MiningConfig { source: NegativeSource::SelfModel, ..mining.clone() };
    let mined = mine_self(step1, cfg.pooling, data.corpus, data.queries, data.qrels, &mining, Some(data.teacher))?;
    let td = TrainingData { corpus: data.corpus, queries: data.queries, triplets: &mined.triplets, source: NegativeSource::SelfModel };
    let (params, log) = train(cfg, &td, init)?;
    Ok(StageOutcome { params, log, mined })
}

pub struct TwoStepOutcome {
    pub step1: StageOutcome,
    pub step2: Option<StageOutcome>,
    pub step1_digest: String,
}

impl TwoStepOutcome {
    pub fn model(&self) -> &EncoderParams {
        self.step2.as_ref().map_or(&self.step1.params, |s| &s.params)
    }
}

/// Step 1: DistilMSE on BM25 negatives. Step 2 (optional): mine with the
/// step-1 model and retrain from the scenario's initialization.
pub fn run_two_step_self_distil(
    cfg: &ScenarioConfig,
    mining: &MiningConfig,
    data: &PipelineData<'_>,
    pretrained: Option<&EncoderParams>,
    run_step2: bool,
) -> Result<TwoStepOutcome> {
    if cfg.name.negatives() != NegativeSource::SelfModel {
        return Err(config("two-step self-distillation needs a SelfDistil scenario"));
    }
    cfg.validate()?;
    let init = initial_params(cfg, data, pretrained)?;
    let step1 = train_on_bm25(&step1_config(cfg), mining, data, &init)?;
    let step1_digest = step1.params.digest_hex();
    let step2 = if run_step2 { Some(self_distil_step2(cfg, mining, data, &step1.params, &init)?) } else { None };
    Ok(TwoStepOutcome { step1, step2, step1_digest })
}

/// Ensemble distillation: negatives pooled from BM25 and the step-1 model.
pub fn ensemble_distil_step2(
    cfg: &ScenarioConfig,
    mining: &MiningConfig,
    data: &PipelineData<'_>,
    step1: &EncoderParams,
    init: &EncoderParams,
) -> Result<StageOutcome> {
    let mining = MiningConfig { source: NegativeSource::Ensemble, ..mining.clone() };
    let bm25 = Bm25Retriever::new(data.corpus)?;
    let model = SparseRetriever::new(step1.clone(), cfg.pooling, data.corpus)?;
    let retrievers: [&dyn Retriever; 2] = [&bm25, &model];
    let mined = mine_ensemble(&retrievers, data.corpus, data.queries, data.qrels, &mining, Some(data.teacher))?;
    let td = TrainingData { corpus: data.corpus, queries: data.queries, triplets: &mined.triplets, source: NegativeSource::Ensemble };
    let (params, log) = train(cfg, &td, init)?;
    Ok(StageOutcome { params, log, mined })
}

/// Trains any scenario end to end and returns the final model.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    mining: &MiningConfig,
    data: &PipelineData<'_>,
    pretrained: Option<&EncoderParams>,
) -> Result<EncoderParams> {
    cfg.validate()?;
    let init = initial_params(cfg, data, pretrained)?;
    match cfg.name.negatives() {
        NegativeSource::Bm25 => Ok(train_on_bm25(cfg, mining, data, &init)?.params),
        NegativeSource::SelfModel => Ok(run_two_step_self_distil(cfg, mining, data, pretrained, true)?.model().clone()),
        NegativeSource::Ensemble => {
            let step1 = train_on_bm25(&step1_config(cfg), mining, data, &init)?;
            Ok(ensemble_distil_step2(cfg, mining, data, &step1.params, &init)?.params)
        }
        NegativeSource::Spans => Err(config("span pairs are not a scenario negative source")),
    }
}

/// Dev-set effectiveness and efficiency of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub summary: Summary,
    pub flops: f64,
    pub run: crate::types::RunList,
}

pub fn evaluate_model(
    model: &EncoderParams,
    mode: PoolingMode,
    corpus: &Collection,
    queries: &Collection,
    qrels: &Qrels,
) -> Result<ModelEval> {
    let retriever = SparseRetriever::new(model.clone(), mode, corpus)?;
    let reps = encode_collection(model, mode, queries)?;
    let mut run = crate::types::RunList::new();
    for (q, rep) in queries.iter().zip(&reps) {
        run.insert(q.id.clone(), retriever.index.retrieve(rep, 1000))?;
    }
    let flops = retriever.index.estimate_flops(&reps)?;
    Ok(ModelEval { summary: summarize(&run, qrels), flops, run })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambda_grid: Vec<RegWeights>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let grid = [3e-3, 1e-2, 3e-2, 1e-1, 3e-1];
        Self {
            lambda_grid: grid.iter().map(|&l| RegWeights { lambda_q: l, lambda_d: l }).collect(),
            seeds: vec![1, 2, 3],
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.seeds.is_empty() {
            return Err(config("sweep needs at least one grid point and one seed"));
        }
        self.lambda_grid.iter().try_for_each(RegWeights::validate)
    }

    /// One scenario per (grid point, seed), grid-major.
    pub fn cells(&self, template: &ScenarioConfig) -> Vec<ScenarioConfig> {
        self.lambda_grid
            .iter()
            .flat_map(|&reg| self.seeds.iter().map(move |&seed| ScenarioConfig { reg, seed, ..template.clone() }))
            .collect()
    }
}

/// Runs one cell, converting failures into a recorded error.
pub fn run_cell(cfg: &ScenarioConfig, f: impl FnOnce(&ScenarioConfig) -> Result<CellMetrics>) -> CellResult {
    match f(cfg) {
        Ok(m) => CellResult { reg: cfg.reg, seed: cfg.seed, metrics: Some(m), error: None },
        Err(e) => CellResult { reg: cfg.reg, seed: cfg.seed, metrics: None, error: Some(format!("{e}")) },
    }
}

/// Sequential sweep; cells are independent so callers may parallelize
/// [`SweepSpec::cells`] with [`run_cell`] instead.
pub fn sweep(
    template: &ScenarioConfig,
    spec: &SweepSpec,
    mut f: impl FnMut(&ScenarioConfig) -> Result<CellMetrics>,
) -> Result<Vec<CellResult>> {
    spec.validate()?;
    Ok(spec.cells(template).iter().map(|c| run_cell(c, &mut f)).collect())
}

/// Mean cosine between pooled representations of same-document span pairs
/// and of cross-document pairs.
pub fn span_similarity(params: &EncoderParams, mode: PoolingMode, docs: &Collection) -> Result<(f64, f64)> {
    let mut pairs = Vec::new();
    for d in docs {
        if let Some((a, b)) = spans(&d.tokens) {
            pairs.push((params.encode_dense(a, mode)?, params.encode_dense(b, mode)?));
        }
    }
    if pairs.len() < 2 {
        return Err(invalid("need at least 2 splittable documents"));
    }
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let n = sqrt(a.iter().map(|x| x * x).sum::<f64>()) * sqrt(b.iter().map(|x| x * x).sum::<f64>());
        if n == 0.0 {
            0.0
        } else {
            d / n
        }
    };
    let n = pairs.len();
    let same = pairs.iter().map(|(a, b)| cos(a, b)).sum::<f64>() / n as f64;
    let cross = (0..n).map(|i| cos(&pairs[i].0, &pairs[(i + 1) % n].1)).sum::<f64>() / n as f64;
    Ok((same, cross))
}
