//! On-disk benchmark layout and the multi-stage workflows built on the core
//! crate.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lsr_core::datagen::{Benchmark, GeneratorSpec, GroundTruth};
use lsr_core::encoder::{EncoderParams, PoolingMode};
use lsr_core::eval::{zero_shot_suite, CellMetrics, CellResult, ZeroShotReport};
use lsr_core::lexical::{fuse_sum, Bm25Index, Bm25Params};
use lsr_core::mining::{MiningConfig, OracleTeacher};
use lsr_core::trainer::{evaluate_model, run_cell, run_scenario, PipelineData, PretrainConfig, ScenarioConfig, SweepSpec};
use lsr_core::types::{Collection, Qrels, RunList};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, write_json};
use crate::error::{LsrError, Result};
use crate::formats::*;

pub const CORPUS: &str = "corpus.tsv";
pub const TRAIN_QUERIES: &str = "train_queries.tsv";
pub const DEV_QUERIES: &str = "dev_queries.tsv";
pub const QUERIES: &str = "queries.tsv";
pub const QRELS: &str = "qrels.txt";
pub const TRUTH: &str = "truth.json";
pub const SPEC: &str = "spec.json";
pub const SHIFTED: &str = "shifted";

/// In-domain benchmark as stored by `datagen`.
pub struct BenchmarkData {
    pub spec: GeneratorSpec,
    pub corpus: Collection,
    pub train_queries: Collection,
    pub dev_queries: Collection,
    pub qrels: Qrels,
    pub truth: GroundTruth,
}

/// Out-of-domain benchmark directory under `shifted/`.
pub struct ShiftedData {
    pub bench: Benchmark,
    pub truth: Option<GroundTruth>,
}

pub fn write_benchmark(dir: &Path, spec: &GeneratorSpec, data: &lsr_core::datagen::Generated) -> Result<Vec<PathBuf>> {
    let files = [
        (CORPUS, write_collection(&data.corpus)),
        (TRAIN_QUERIES, write_collection(&data.train_queries)),
        (DEV_QUERIES, write_collection(&data.dev_queries)),
        (QRELS, write_qrels(&data.qrels)),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        write_text(&dir.join(name), &text)?;
        written.push(dir.join(name));
    }
    write_json(&dir.join(TRUTH), &data.truth)?;
    write_json(&dir.join(SPEC), spec)?;
    written.extend([dir.join(TRUTH), dir.join(SPEC)]);
    Ok(written)
}

pub fn write_shifted(dir: &Path, shifted: &[(Benchmark, GroundTruth)]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (b, truth) in shifted {
        let sub = dir.join(SHIFTED).join(&b.name);
        write_text(&sub.join(CORPUS), &write_collection(&b.corpus))?;
        write_text(&sub.join(QUERIES), &write_collection(&b.queries))?;
        write_text(&sub.join(QRELS), &write_qrels(&b.qrels))?;
        write_json(&sub.join(TRUTH), truth)?;
        written.extend([CORPUS, QUERIES, QRELS, TRUTH].map(|f| sub.join(f)));
    }
    Ok(written)
}

pub fn load_benchmark(dir: &Path) -> Result<BenchmarkData> {
    if !dir.is_dir() {
        return Err(LsrError::usage(format!("benchmark directory {} does not exist", dir.display())));
    }
    Ok(BenchmarkData {
        spec: read_json(&dir.join(SPEC))?,
        corpus: read_collection_file(&dir.join(CORPUS))?,
        train_queries: read_collection_file(&dir.join(TRAIN_QUERIES))?,
        dev_queries: read_collection_file(&dir.join(DEV_QUERIES))?,
        qrels: read_qrels_file(&dir.join(QRELS))?,
        truth: read_json(&dir.join(TRUTH))?,
    })
}

/// Every `shifted/<name>` directory, in name order.
pub fn load_shifted(dir: &Path) -> Result<Vec<ShiftedData>> {
    let root = dir.join(SHIFTED);
    let Ok(entries) = std::fs::read_dir(&root) else { return Ok(Vec::new()) };
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    dirs.into_iter()
        .map(|d| {
            let truth_path = d.join(TRUTH);
            Ok(ShiftedData {
                bench: Benchmark {
                    name: d.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                    corpus: read_collection_file(&d.join(CORPUS))?,
                    queries: read_collection_file(&d.join(QUERIES))?,
                    qrels: read_qrels_file(&d.join(QRELS))?,
                },
                truth: if truth_path.exists() { Some(read_json(&truth_path)?) } else { None },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub noise: f64,
    pub scale: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { noise: OracleTeacher::DEFAULT_NOISE, scale: OracleTeacher::DEFAULT_SCALE, seed: 0 }
    }
}

impl TeacherConfig {
    pub fn build<'a>(&self, truth: &'a GroundTruth) -> Result<OracleTeacher<'a>> {
        let mut t = OracleTeacher::new(truth, self.noise, self.seed)?;
        t.scale = self.scale;
        Ok(t)
    }
}

/// Everything a training workflow needs besides data. Only `scenario` is
/// required in the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            mining: MiningConfig::default(),
            pretrain: PretrainConfig::default(),
            teacher: TeacherConfig::default(),
            sweep: SweepSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.mining.validate()?;
        self.sweep.validate()?;
        if !(self.teacher.noise >= 0.0 && self.teacher.scale.is_finite()) {
            return Err(LsrError::usage("teacher noise must be >= 0 and scale finite"));
        }
        Ok(())
    }
}

/// Dev MRR@10 and FLOPS of one trained scenario, plus optional zero-shot.
pub fn train_and_evaluate(
    cfg: &ScenarioConfig,
    exp: &ExperimentConfig,
    data: &BenchmarkData,
    pretrained: Option<&EncoderParams>,
    shifted: &[ShiftedData],
) -> Result<(EncoderParams, CellMetrics)> {
    let teacher = exp.teacher.build(&data.truth)?;
    let pd = PipelineData {
        corpus: &data.corpus,
        queries: &data.train_queries,
        qrels: &data.qrels,
        teacher: &teacher,
        input_vocab: data.spec.input_vocab,
        vocab: data.spec.vocab,
    };
    let model = run_scenario(cfg, &exp.mining, &pd, pretrained)?;
    let ev = evaluate_model(&model, cfg.pooling, &data.corpus, &data.dev_queries, &data.qrels)?;
    let zs = if shifted.is_empty() { None } else { Some(zero_shot(&model, cfg.pooling, shifted, false)?.mean_ndcg_at_10) };
    Ok((model, CellMetrics { mrr_at_10: ev.summary.mrr_at_10, flops: ev.flops, zero_shot_ndcg_at_10: zs }))
}

/// Runs `f` over every cell with at most `parallelism` cells in flight;
/// results keep grid-major order regardless of completion order.
pub fn sweep_parallel<F>(template: &ScenarioConfig, spec: &SweepSpec, parallelism: usize, f: F) -> Result<Vec<CellResult>>
where
    F: Fn(&ScenarioConfig) -> lsr_core::error::Result<CellMetrics> + Sync,
{
    spec.validate()?;
    let cells = spec.cells(template);
    let results: Vec<Mutex<Option<CellResult>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let r = run_cell(cell, &f);
                *results[i].lock().expect("no poisoned cells") = Some(r);
            });
        }
    });
    Ok(results.into_iter().map(|m| m.into_inner().expect("no poisoned cells").expect("every cell ran")).collect())
}

/// BM25 run over a collection.
pub fn bm25_run(corpus: &Collection, queries: &Collection, params: Bm25Params, k: usize) -> Result<RunList> {
    Ok(Bm25Index::build(corpus, params)?.run(queries, k))
}

/// nDCG@10 of `model` on every shifted benchmark; with `fuse_bm25` the model
/// run is summed with a BM25 run first.
pub fn zero_shot(model: &EncoderParams, pooling: PoolingMode, shifted: &[ShiftedData], fuse_bm25: bool) -> Result<ZeroShotReport> {
    let datasets: Vec<(&str, &Qrels)> = shifted.iter().map(|s| (s.bench.name.as_str(), &s.bench.qrels)).collect();
    let report = zero_shot_suite(datasets, |i| -> Result<RunList> {
        let b = &shifted[i].bench;
        let run = evaluate_model(model, pooling, &b.corpus, &b.queries, &b.qrels)?.run;
        if fuse_bm25 {
            let lexical = bm25_run(&b.corpus, &b.queries, Bm25Params::default(), 1000)?;
            Ok(fuse_sum(&run, &lexical, 1000, false).run)
        } else {
            Ok(run)
        }
    })?;
    Ok(report)
}
