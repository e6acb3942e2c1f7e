use std::path::Path;
use std::process::{Command, Output};

fn lsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsr")).args(args).current_dir(dir).output().expect("lsr runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = lsr(dir, args);
    assert!(out.status.success(), "lsr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

/// datagen -> mine -> train -> index -> search -> eval in `dir`.
fn smoke_pipeline(dir: &Path) {
    ok(dir, &["datagen", "--tiny", "--out", "data"]);
    ok(dir, &["mine", "--corpus", "data/corpus.tsv", "--queries", "data/train_queries.tsv", "--qrels", "data/qrels.txt", "--truth", "data/truth.json", "--out", "triplets.tsv"]);
    ok(dir, &["train", "--scenario", "DistilMSE", "--steps", "150", "--corpus", "data/corpus.tsv", "--queries", "data/train_queries.tsv", "--triplets", "triplets.tsv", "--out", "model.json", "--log", "log.csv"]);
    ok(dir, &["index", "--model", "model.json", "--corpus", "data/corpus.tsv", "--out", "index.bin"]);
    ok(dir, &["search", "--index", "index.bin", "--model", "model.json", "--queries", "data/dev_queries.tsv", "--out", "run.txt"]);
    ok(dir, &["eval", "--run", "run.txt", "--qrels", "data/qrels.txt", "--out", "report.json"]);
}

#[test]
fn smoke_pipeline_yields_mrr_in_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    smoke_pipeline(dir.path());
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    let mrr = report["summary"]["mrr_at_10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mrr), "{mrr}");
    assert_eq!(report["summary"]["evaluated"], 40);
    for m in ["data/manifest.json", "triplets.tsv.manifest.json", "model.json.manifest.json", "index.bin.manifest.json", "run.txt.manifest.json", "report.json.manifest.json"] {
        let v: serde_json::Value = serde_json::from_str(&read(dir.path(), m)).unwrap();
        assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64, "{m}");
        assert!(!v["outputs"].as_object().unwrap().is_empty(), "{m}");
    }
}

#[test]
fn identical_invocations_produce_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    smoke_pipeline(a.path());
    smoke_pipeline(b.path());
    for f in ["data/corpus.tsv", "data/truth.json", "triplets.tsv", "model.json", "run.txt", "report.json", "run.txt.manifest.json", "report.json.manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read(a.path().join("index.bin")).unwrap(), std::fs::read(b.path().join("index.bin")).unwrap());
}

#[test]
fn sweep_then_curve_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["datagen", "--tiny", "--shifted", "0", "--out", "data"]);
    ok(d, &["sweep", "--scenario", "SPLADE", "--steps", "40", "--hidden", "4", "--data", "data", "--out", "sweep", "--parallelism", "2"]);
    ok(d, &["curve", "--cells", "sweep/cells.json", "--out", "curve.csv"]);
    let csv = read(d, "curve.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6, "{csv}");
    assert!(lines[0].starts_with("lambda_q,lambda_d"));
    let lambdas: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(lambdas, ["0.003", "0.01", "0.03", "0.1", "0.3"]);
}

#[test]
fn fusion_and_zero_shot_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["datagen", "--tiny", "--out", "data"]);
    ok(d, &["bm25", "--corpus", "data/corpus.tsv", "--queries", "data/dev_queries.tsv", "--out", "bm25.txt"]);
    ok(d, &["fuse", "--a", "bm25.txt", "--b", "bm25.txt", "--out", "fused.txt"]);
    // doubling every score keeps the ranking
    let strip = |t: String| t.lines().map(|l| l.split(' ').take(4).collect::<Vec<_>>().join(" ")).collect::<Vec<_>>();
    assert_eq!(strip(read(d, "bm25.txt")), strip(read(d, "fused.txt")));

    ok(d, &["pretrain", "--corpus", "data/corpus.tsv", "--steps", "5", "--out", "init.json"]);
    ok(d, &["zero-shot", "--data", "data", "--model", "init.json", "--fuse-bm25", "--out", "zs.json"]);
    let zs: serde_json::Value = serde_json::from_str(&read(d, "zs.json")).unwrap();
    for key in ["model", "fused_with_bm25"] {
        let rows = zs[key]["datasets"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r["ndcg_at_10"].is_f64()), "{zs}");
        assert!(zs[key]["mean_ndcg_at_10"].is_f64());
    }
}

#[test]
fn exit_codes_distinguish_usage_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(lsr(d, &["eval", "--run", "missing.txt", "--qrels", "q.txt", "--out", "r.json"]).status.code(), Some(2));
    assert_eq!(lsr(d, &["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(lsr(d, &["nosuch"]).status.code(), Some(2));
    assert_eq!(lsr(d, &["train", "--corpus", "c", "--queries", "q", "--triplets", "t", "--out", "o"]).status.code(), Some(2));
    std::fs::write(d.join("run.txt"), "q1 Q0 d1 1\n").unwrap();
    std::fs::write(d.join("q.txt"), "q1 0 d1 1\n").unwrap();
    let out = lsr(d, &["eval", "--run", "run.txt", "--qrels", "q.txt", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.txt:1"));
    assert_eq!(lsr(d, &["--help"]).status.code(), Some(0));

    // a well-formed invocation that fails while writing is a runtime failure
    ok(d, &["datagen", "--tiny", "--shifted", "0", "--out", "data"]);
    ok(d, &["mine", "--corpus", "data/corpus.tsv", "--queries", "data/train_queries.tsv", "--qrels", "data/qrels.txt", "--out", "t.tsv"]);
    let out = lsr(d, &["train", "--scenario", "SPLADE", "--steps", "5", "--corpus", "data/corpus.tsv", "--queries", "data/train_queries.tsv", "--triplets", "t.tsv", "--out", "data/corpus.tsv/m.json"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}
