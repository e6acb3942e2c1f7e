//! Command-line front end. Each subcommand reads its inputs, delegates to one
//! core operation and writes its outputs plus a manifest.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsr_core::datagen::{generate, generate_shifted, GeneratorSpec};
use lsr_core::encoder::{EncoderParams, PoolingMode};
use lsr_core::eval::{summarize, tradeoff_csv, tradeoff_curve, CellResult};
use lsr_core::index::InvertedIndex;
use lsr_core::lexical::{fuse_sum, Bm25Params};
use lsr_core::mining::{encode_collection, mine_bm25, mine_ensemble, mine_self, Bm25Retriever, MiningConfig, Retriever, SparseRetriever, Teacher};
use lsr_core::objectives::{NegativeSource, RegWeights};
use lsr_core::trainer::{
    log_csv, pretrain_contrastive_spans, run_two_step_self_distil, train, PipelineData, PretrainConfig, ScenarioConfig,
    ScenarioName, TrainingData,
};
use lsr_core::types::{Collection, RunList};
use serde::Serialize;

use crate::artifacts::*;
use crate::error::{LsrError, Result};
use crate::formats::*;
use crate::pipeline::*;

#[derive(Parser, Debug)]
#[command(name = "lsr", version, about = "Learned sparse retrieval: data, training, indexing and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Command {
    /// Generate a synthetic benchmark directory.
    Datagen(DatagenArgs),
    /// Contrastive span pre-training of an encoder checkpoint.
    Pretrain(PretrainArgs),
    /// Mine hard-negative triplets.
    Mine(MineArgs),
    /// Train an encoder on a triplet file.
    Train(TrainArgs),
    /// Two-step self-distillation on a benchmark directory.
    TwoStep(TwoStepArgs),
    /// Train every (lambda, seed) cell of a sweep.
    Sweep(SweepArgs),
    /// Encode a corpus and build an inverted index.
    Index(IndexArgs),
    /// Retrieve from an index with an encoder.
    Search(SearchArgs),
    /// BM25 run over a corpus.
    Bm25(Bm25Args),
    /// Sum the scores of two runs.
    Fuse(FuseArgs),
    /// MRR@10, nDCG@10 and R@1k of a run.
    Eval(EvalArgs),
    /// nDCG@10 on every shifted corpus of a benchmark directory.
    ZeroShot(ZeroShotArgs),
    /// Aggregate sweep cells into a tradeoff CSV.
    Curve(CurveArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
pub enum Pooling {
    Max,
    Sum,
}

impl From<Pooling> for PoolingMode {
    fn from(p: Pooling) -> Self {
        match p {
            Pooling::Max => PoolingMode::Max,
            Pooling::Sum => PoolingMode::Sum,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
pub enum Source {
    Bm25,
    #[value(name = "self")]
    SelfModel,
    Ensemble,
}

fn parse_scenario(s: &str) -> std::result::Result<ScenarioName, String> {
    ScenarioName::ALL.into_iter().find(|n| n.label().eq_ignore_ascii_case(s)).ok_or_else(|| {
        let names: Vec<&str> = ScenarioName::ALL.iter().map(|n| n.label()).collect();
        format!("unknown scenario {s:?}; expected one of {}", names.join(", "))
    })
}

#[derive(Args, Debug, Serialize)]
pub struct DatagenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator spec JSON; missing fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Small benchmark for smoke runs.
    #[arg(long, conflicts_with = "spec")]
    pub tiny: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of shifted corpora (default: all configured, 0 for none).
    #[arg(long)]
    pub shifted: Option<usize>,
}

/// Scenario settings: a config file, a scenario name, or both, plus overrides.
#[derive(Args, Debug, Serialize)]
pub struct ExperimentArgs {
    /// Experiment JSON (`scenario` required; `mining`, `pretrain`, `teacher`, `sweep` optional).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<ScenarioName>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Sets both λ_q and λ_d.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_q: Option<f64>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long, value_enum)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub mining_seed: Option<u64>,
    #[arg(long)]
    pub teacher_noise: Option<f64>,
    #[arg(long)]
    pub teacher_seed: Option<u64>,
}

/// λ used when only a scenario name is given.
pub const DEFAULT_LAMBDA: f64 = 1e-2;

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut exp = match (&self.config, self.scenario) {
            (Some(path), _) => read_json::<ExperimentConfig>(path)?,
            (None, Some(name)) => {
                ExperimentConfig::new(ScenarioConfig::new(name, RegWeights { lambda_q: DEFAULT_LAMBDA, lambda_d: DEFAULT_LAMBDA }, 0))
            }
            (None, None) => return Err(LsrError::usage("either --config or --scenario is required")),
        };
        let s = &mut exp.scenario;
        if let (Some(_), Some(name)) = (&self.config, self.scenario) {
            if name != s.name {
                *s = ScenarioConfig { name, init: name.init(), ..s.clone() };
            }
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.steps {
            s.steps = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.lr {
            s.learning_rate = v;
        }
        if let Some(v) = self.lambda {
            s.reg = RegWeights { lambda_q: v, lambda_d: v };
        }
        if let Some(v) = self.lambda_q {
            s.reg.lambda_q = v;
        }
        if let Some(v) = self.lambda_d {
            s.reg.lambda_d = v;
        }
        if let Some(v) = self.pooling {
            s.pooling = v.into();
        }
        if let Some(v) = self.hidden {
            s.hidden = v;
        }
        if let Some(v) = self.top_k {
            exp.mining.top_k = v;
        }
        if let Some(v) = self.negatives {
            exp.mining.negatives_per_query = v;
        }
        if let Some(v) = self.mining_seed {
            exp.mining.seed = v;
        }
        if let Some(v) = self.teacher_noise {
            exp.teacher.noise = v;
        }
        if let Some(v) = self.teacher_seed {
            exp.teacher.seed = v;
        }
        exp.validate().map_err(|e| LsrError::usage(e.to_string()))?;
        Ok(exp)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh encoder.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Pretrain config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input_vocab: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub pooling: Option<Pooling>,
}

#[derive(Args, Debug, Serialize)]
pub struct MineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "bm25")]
    pub source: Source,
    /// Encoder checkpoint for `self` and `ensemble` mining.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "max")]
    pub pooling: Pooling,
    /// Ground-truth JSON; when given, triplets carry oracle teacher scores.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = lsr_core::mining::OracleTeacher::DEFAULT_NOISE)]
    pub teacher_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub teacher_seed: u64,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[arg(long, default_value_t = 20)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Initial checkpoint (required for pretrained-init scenarios).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Encoder input vocabulary for a fresh init (default: the benchmark's
    /// `spec.json` next to the corpus, else largest token id + 1).
    #[arg(long)]
    pub input_vocab: Option<usize>,
    /// Encoder output vocabulary for a fresh init (default: as above, else the input vocabulary).
    #[arg(long)]
    pub vocab: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct TwoStepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Benchmark directory written by `datagen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Stop after step 1 (equivalent to DistilMSE).
    #[arg(long)]
    pub no_step2: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Maximum number of cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Also report mean zero-shot nDCG@10 per cell.
    #[arg(long)]
    pub zero_shot: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "max")]
    pub pooling: Pooling,
    /// 8-bit weight quantization.
    #[arg(long)]
    pub quantize: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "max")]
    pub pooling: Pooling,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    #[arg(long, default_value = "lsr")]
    pub tag: String,
}

#[derive(Args, Debug, Serialize)]
pub struct Bm25Args {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.4)]
    pub b: f64,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    /// Min-max normalize each run per query before summing.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Report JSON; the summary is also printed to stdout.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ZeroShotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "max")]
    pub pooling: Pooling,
    /// Also report the model fused with BM25.
    #[arg(long)]
    pub fuse_bm25: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct CurveArgs {
    /// `cells.json` written by `sweep`.
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lsr: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Datagen(a) => datagen(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train_cmd(a),
        Command::TwoStep(a) => two_step(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Index(a) => index(a),
        Command::Search(a) => search(a),
        Command::Bm25(a) => bm25(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::ZeroShot(a) => zero_shot_cmd(a),
        Command::Curve(a) => curve(a),
    }
}

#[derive(Serialize)]
struct Resolved<'a, A: Serialize, R: Serialize> {
    args: &'a A,
    resolved: R,
}

fn manifest<A: Serialize, R: Serialize>(name: &str, args: &A, resolved: R) -> Manifest {
    Manifest::new(name, &Resolved { args, resolved })
}

/// Hashes every input up front so a missing file fails before any work.
fn inputs<'a>(m: &mut Manifest, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    paths.into_iter().try_for_each(|p| m.input(p))
}

fn finish(mut m: Manifest, anchor: &Path, outputs: &[PathBuf]) -> Result<()> {
    for o in outputs {
        m.output(o)?;
    }
    m.write_for(anchor)?;
    Ok(())
}

fn datagen(a: &DatagenArgs) -> Result<()> {
    let mut spec = match (&a.spec, a.tiny) {
        (Some(p), _) => read_json::<GeneratorSpec>(p)?,
        (None, true) => GeneratorSpec::tiny(GeneratorSpec::default().seed),
        (None, false) => GeneratorSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| LsrError::usage(e.to_string()))?;
    let n_shifted = a.shifted.unwrap_or(spec.shifts.len());
    let mut m = manifest("datagen", a, &spec).seed("generator", spec.seed);
    if let Some(p) = &a.spec {
        m.input(p)?;
    }
    let g = generate(&spec)?;
    for w in &g.warnings {
        eprintln!("lsr: warning: {w}");
    }
    let mut outputs = write_benchmark(&a.out, &spec, &g)?;
    if n_shifted > 0 {
        outputs.extend(write_shifted(&a.out, &generate_shifted(&spec, n_shifted)?)?);
    }
    m.notes = g.warnings.clone();
    finish(m, &a.out, &outputs)
}

fn fresh_or_init(init: &Option<PathBuf>, fresh: impl FnOnce() -> Result<EncoderParams>) -> Result<EncoderParams> {
    match init {
        Some(p) => read_checkpoint(p),
        None => fresh(),
    }
}

/// Encoder sizes for a fresh init: flags, else the `spec.json` of the
/// benchmark directory holding `corpus`, else the largest token id + 1.
fn vocab_sizes(corpus: &Path, collections: &[&Collection], input_vocab: Option<usize>, vocab: Option<usize>) -> Result<(usize, usize)> {
    let spec_path = corpus.parent().map(|d| d.join(SPEC)).filter(|p| p.is_file());
    let spec = spec_path.map(|p| read_json::<GeneratorSpec>(&p)).transpose()?;
    let observed = collections.iter().filter_map(|c| c.max_token()).max().map(|t| t as usize + 1);
    let input = input_vocab
        .or(spec.as_ref().map(|s| s.input_vocab))
        .or(observed)
        .ok_or_else(|| LsrError::usage("cannot infer the input vocabulary of empty data"))?;
    Ok((input, vocab.or(spec.map(|s| s.vocab)).unwrap_or(input)))
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<PretrainConfig>(p)?,
        None => PretrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.pooling {
        cfg.pooling = v.into();
    }
    let mut m = manifest("pretrain", a, &cfg).seed("pretrain", cfg.seed);
    inputs(&mut m, [a.corpus.as_path()].into_iter().chain(a.config.as_deref()).chain(a.init.as_deref()))?;
    let corpus = read_collection_file(&a.corpus)?;
    let init = fresh_or_init(&a.init, || {
        let (iv, v) = vocab_sizes(&a.corpus, &[&corpus], a.input_vocab, a.vocab)?;
        Ok(EncoderParams::init(iv, v, a.hidden, cfg.seed)?)
    })?;
    let out = pretrain_contrastive_spans(&corpus, &init, &cfg)?;
    write_json(&a.out, &out.params)?;
    m.notes.push(format!("{} documents shorter than 2 tokens excluded", out.excluded));
    if let Some(last) = out.losses.last() {
        m.notes.push(format!("final span loss {}", fmt_real(*last)));
    }
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

fn mine(a: &MineArgs) -> Result<()> {
    let source = match a.source {
        Source::Bm25 => NegativeSource::Bm25,
        Source::SelfModel => NegativeSource::SelfModel,
        Source::Ensemble => NegativeSource::Ensemble,
    };
    let cfg = MiningConfig { source, top_k: a.top_k, negatives_per_query: a.negatives, seed: a.seed };
    cfg.validate().map_err(|e| LsrError::usage(e.to_string()))?;
    let mut m = manifest("mine", a, &cfg).seed("mining", a.seed).seed("teacher", a.teacher_seed);
    inputs(
        &mut m,
        [a.corpus.as_path(), &a.queries, &a.qrels].into_iter().chain(a.model.as_deref()).chain(a.truth.as_deref()),
    )?;
    let corpus = read_collection_file(&a.corpus)?;
    let queries = read_collection_file(&a.queries)?;
    let qrels = read_qrels_file(&a.qrels)?;
    let truth: Option<lsr_core::datagen::GroundTruth> = a.truth.as_deref().map(read_json).transpose()?;
    let teacher_cfg = TeacherConfig { noise: a.teacher_noise, seed: a.teacher_seed, ..TeacherConfig::default() };
    let oracle = truth.as_ref().map(|t| teacher_cfg.build(t)).transpose()?;
    let teacher = oracle.as_ref().map(|t| t as &dyn Teacher);
    let model = || -> Result<EncoderParams> {
        read_checkpoint(a.model.as_ref().ok_or_else(|| LsrError::usage("--model is required for self and ensemble mining"))?)
    };
    let mined = match source {
        NegativeSource::Bm25 => mine_bm25(&corpus, &queries, &qrels, &cfg, teacher)?,
        NegativeSource::SelfModel => mine_self(&model()?, a.pooling.into(), &corpus, &queries, &qrels, &cfg, teacher)?,
        _ => {
            let bm25 = Bm25Retriever::new(&corpus)?;
            let sparse = SparseRetriever::new(model()?, a.pooling.into(), &corpus)?;
            let rs: [&dyn Retriever; 2] = [&bm25, &sparse];
            mine_ensemble(&rs, &corpus, &queries, &qrels, &cfg, teacher)?
        }
    };
    write_text(&a.out, &write_triplets(&mined.triplets))?;
    m.notes.push(format!("{} queries skipped", mined.skipped.len()));
    m.config["mining"] = serde_json::to_value(&mined.manifest).expect("manifest serializes");
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let exp = a.exp.resolve()?;
    let cfg = &exp.scenario;
    let mut m = manifest("train", a, &exp).seed("scenario", cfg.seed);
    inputs(
        &mut m,
        [a.corpus.as_path(), &a.queries, &a.triplets].into_iter().chain(a.exp.config.as_deref()).chain(a.init.as_deref()),
    )?;
    let corpus = read_collection_file(&a.corpus)?;
    let queries = read_collection_file(&a.queries)?;
    let triplets = read_triplets_file(&a.triplets)?;
    let init = match (&a.init, cfg.init) {
        (Some(p), _) => read_checkpoint(p)?,
        (None, lsr_core::trainer::InitKind::PretrainedCheckpoint) => {
            return Err(LsrError::usage(format!("scenario {} needs --init with a pretrained checkpoint", cfg.name.label())))
        }
        (None, _) => {
            let (iv, v) = vocab_sizes(&a.corpus, &[&corpus, &queries], a.input_vocab, a.vocab)?;
            cfg.fresh_params(iv, v)?
        }
    };
    let td = TrainingData { corpus: &corpus, queries: &queries, triplets: &triplets, source: cfg.name.negatives() };
    let (params, log) = train(cfg, &td, &init)?;
    write_json(&a.out, &params)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(l) = &a.log {
        write_text(l, &log_csv(&log))?;
        outputs.push(l.clone());
    }
    finish(m, &a.out, &outputs)
}

fn two_step(a: &TwoStepArgs) -> Result<()> {
    let exp = a.exp.resolve()?;
    let cfg = &exp.scenario;
    let mut m = manifest("two-step", a, &exp).seed("scenario", cfg.seed).seed("mining", exp.mining.seed).seed("teacher", exp.teacher.seed);
    inputs(&mut m, a.exp.config.as_deref().into_iter().chain(a.pretrained.as_deref()))?;
    let data = load_benchmark(&a.data)?;
    let pretrained = a.pretrained.as_deref().map(read_checkpoint).transpose()?;
    let teacher = exp.teacher.build(&data.truth)?;
    let pd = PipelineData {
        corpus: &data.corpus,
        queries: &data.train_queries,
        qrels: &data.qrels,
        teacher: &teacher,
        input_vocab: data.spec.input_vocab,
        vocab: data.spec.vocab,
    };
    let out = run_two_step_self_distil(cfg, &exp.mining, &pd, pretrained.as_ref(), !a.no_step2)?;
    let mut outputs = Vec::new();
    let mut stage = |name: &str, s: &lsr_core::trainer::StageOutcome| -> Result<()> {
        let files = [
            (a.out.join(format!("{name}.json")), to_json(&s.params)),
            (a.out.join(format!("{name}_triplets.tsv")), write_triplets(&s.mined.triplets)),
            (a.out.join(format!("{name}_log.csv")), log_csv(&s.log)),
        ];
        for (p, text) in files {
            write_text(&p, &text)?;
            outputs.push(p);
        }
        Ok(())
    };
    stage("step1", &out.step1)?;
    if let Some(s2) = &out.step2 {
        stage("step2", s2)?;
    }
    write_json(&a.out.join("model.json"), out.model())?;
    outputs.push(a.out.join("model.json"));
    m.notes.push(format!("step-1 checkpoint sha256 {}", out.step1_digest));
    finish(m, &a.out, &outputs)
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let exp = a.exp.resolve()?;
    if a.parallelism == 0 {
        return Err(LsrError::usage("--parallelism must be at least 1"));
    }
    let mut m = manifest("sweep", a, &exp);
    for &s in &exp.sweep.seeds {
        m.seeds.insert(format!("cell{s}"), s);
    }
    inputs(&mut m, a.exp.config.as_deref().into_iter().chain(a.pretrained.as_deref()))?;
    let data = load_benchmark(&a.data)?;
    let shifted = if a.zero_shot { load_shifted(&a.data)? } else { Vec::new() };
    let pretrained = a.pretrained.as_deref().map(read_checkpoint).transpose()?;
    let cells = sweep_parallel(&exp.scenario, &exp.sweep, a.parallelism, |cfg| {
        train_and_evaluate(cfg, &exp, &data, pretrained.as_ref(), &shifted)
            .map(|(_, metrics)| metrics)
            .map_err(|e| match e {
                LsrError::Core(c) => c,
                other => lsr_core::error::Error::Invalid(other.to_string()),
            })
    })?;
    let path = a.out.join("cells.json");
    write_json(&path, &cells)?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        m.notes.push(format!("{failed} cells failed"));
    }
    finish(m, &a.out, &[path])
}

fn index(a: &IndexArgs) -> Result<()> {
    let mut m = manifest("index", a, ());
    inputs(&mut m, [a.model.as_path(), &a.corpus])?;
    let model = read_checkpoint(&a.model)?;
    let corpus = read_collection_file(&a.corpus)?;
    let reps = encode_collection(&model, a.pooling.into(), &corpus)?;
    let mut idx = InvertedIndex::build(model.vocab, corpus.iter().map(|d| d.id.as_str()).zip(reps.iter()))?;
    if a.quantize {
        idx = idx.quantized();
    }
    write_index(&a.out, &idx)?;
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

fn search(a: &SearchArgs) -> Result<()> {
    let mut m = manifest("search", a, ());
    inputs(&mut m, [a.index.as_path(), &a.model, &a.queries])?;
    let idx = read_index(&a.index)?;
    let model = read_checkpoint(&a.model)?;
    if model.vocab != idx.vocab() {
        return Err(LsrError::usage(format!("model vocabulary {} does not match index vocabulary {}", model.vocab, idx.vocab())));
    }
    let queries = read_collection_file(&a.queries)?;
    let reps = encode_collection(&model, a.pooling.into(), &queries)?;
    let mut run = RunList::new();
    for (q, r) in queries.iter().zip(&reps) {
        run.insert(q.id.clone(), idx.retrieve(r, a.k))?;
    }
    write_text(&a.out, &write_run(&run, &a.tag))?;
    m.notes.push(format!("FLOPS {}", fmt_real(idx.estimate_flops(&reps)?)));
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

fn bm25(a: &Bm25Args) -> Result<()> {
    let params = Bm25Params { k1: a.k1, b: a.b };
    params.validate().map_err(|e| LsrError::usage(e.to_string()))?;
    let mut m = manifest("bm25", a, ());
    inputs(&mut m, [a.corpus.as_path(), &a.queries])?;
    let run = bm25_run(&read_collection_file(&a.corpus)?, &read_collection_file(&a.queries)?, params, a.k)?;
    write_text(&a.out, &write_run(&run, "bm25"))?;
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let mut m = manifest("fuse", a, ());
    inputs(&mut m, [a.a.as_path(), &a.b])?;
    let fused = fuse_sum(&read_run_file(&a.a)?, &read_run_file(&a.b)?, a.k, a.normalize);
    write_text(&a.out, &write_run(&fused.run, "fused"))?;
    if fused.one_sided > 0 {
        m.notes.push(format!("{} queries present in only one run", fused.one_sided));
    }
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

#[derive(Serialize)]
struct EvalReport {
    summary: lsr_core::eval::Summary,
    per_query_mrr_at_10: std::collections::BTreeMap<String, f64>,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut m = manifest("eval", a, ());
    inputs(&mut m, [a.run.as_path(), &a.qrels])?;
    let run = read_run_file(&a.run)?;
    let qrels = read_qrels_file(&a.qrels)?;
    let report = EvalReport {
        summary: summarize(&run, &qrels),
        per_query_mrr_at_10: lsr_core::eval::mrr_at_k(&run, &qrels, 10).per_query,
    };
    print!("{}", to_json(&report.summary));
    write_json(&a.out, &report)?;
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

#[derive(Serialize)]
struct ZeroShotOut {
    model: lsr_core::eval::ZeroShotReport,
    fused_with_bm25: Option<lsr_core::eval::ZeroShotReport>,
}

fn zero_shot_cmd(a: &ZeroShotArgs) -> Result<()> {
    let mut m = manifest("zero-shot", a, ());
    m.input(&a.model)?;
    let model = read_checkpoint(&a.model)?;
    let shifted = load_shifted(&a.data)?;
    if shifted.is_empty() {
        return Err(LsrError::usage(format!("no shifted corpora under {}", a.data.join(SHIFTED).display())));
    }
    let out = ZeroShotOut {
        model: zero_shot(&model, a.pooling.into(), &shifted, false)?,
        fused_with_bm25: if a.fuse_bm25 { Some(zero_shot(&model, a.pooling.into(), &shifted, true)?) } else { None },
    };
    write_json(&a.out, &out)?;
    finish(m, &a.out, std::slice::from_ref(&a.out))
}

fn curve(a: &CurveArgs) -> Result<()> {
    let mut m = manifest("curve", a, ());
    m.input(&a.cells)?;
    let cells: Vec<CellResult> = read_json(&a.cells)?;
    write_text(&a.out, &tradeoff_csv(&tradeoff_curve(&cells)))?;
    finish(m, &a.out, std::slice::from_ref(&a.out))
}
