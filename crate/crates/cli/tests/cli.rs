use std::path::Path;
use std::process::{Command, Output};

use chunkgnn::bench::gen_synthetic;
use chunkgnn::graph::save_edge_list;
use chunkgnn::models::{init_weights, save_weights, ModelConfig, ModelKind, Scheme};
use chunkgnn::tensor::save_feature_file;

fn chunkgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chunkgnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn stats_on_files_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.txt");
    save_edge_list(&gen_synthetic(100, 5.0, 1), &path).unwrap();
    assert_eq!(stdout(&chunkgnn(&["stats", "--graph", path.to_str().unwrap()])), "100 500 5.0\n");

    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "7 0\n").unwrap();
    assert_eq!(stdout(&chunkgnn(&["stats", "--graph", empty.to_str().unwrap()])), "7 0 0.0\n");

    assert_eq!(stdout(&chunkgnn(&["stats", "--graph", "pubmed-like"])), "20000 90000 4.5\n");

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 1\n0 5\n").unwrap();
    let o = chunkgnn(&["stats", "--graph", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
}

fn run_csv(extra: &[&str], out: &Path) -> String {
    let mut args = vec![
        "run", "--model", "gsc", "--graph", "synthetic:300,6", "--hidden", "8", "--layers", "2", "--reps", "1",
        "--seed", "5", "--out", out.to_str().unwrap(), "--format", "csv",
    ];
    args.extend_from_slice(extra);
    let o = chunkgnn(&args);
    stdout(&o);
    String::from_utf8(o.stderr).unwrap()
}

#[test]
fn run_is_reproducible_across_widths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let checksum = |log: &str| log.split("checksum=").nth(1).unwrap().trim().to_string();
    let a = checksum(&run_csv(&["--chunk-width", "8"], &out));
    let b = checksum(&run_csv(&["--chunk-width", "3"], &out));
    let c = checksum(&run_csv(&["--chunk-width", "3", "--scheme", "csr"], &out));
    assert_eq!(a, b);
    assert_eq!(a, c);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("gsc,csr,300,1800,8,3,0,"));
}

#[test]
fn budget_oom_and_auto_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = chunkgnn(&[
        "sweep", "--chunk-widths", "16,auto", "--graph", "synthetic:2000,20", "--hidden", "16", "--budget-bytes",
        "3000000", "--reps", "1", "--out", out.to_str().unwrap(),
    ]);
    stdout(&o);
    let csv = std::fs::read_to_string(&out).unwrap();
    let outcomes: Vec<_> = csv.lines().skip(1).map(|l| (l.split(',').nth(5).unwrap().to_string(), l.rsplit(',').next().unwrap().to_string())).collect();
    assert_eq!(outcomes[0], ("16".into(), "oom".into()));
    assert!(outcomes[1..].iter().all(|(w, o)| w == "12" && o == "ok"), "{outcomes:?}");

    let plan = stdout(&chunkgnn(&["plan", "--budget-bytes", "3000000", "--graph", "synthetic:2000,20", "--hidden", "16"]));
    assert_eq!(plan, "chunk_width 12 chunks 2\n");
    let o = chunkgnn(&["plan", "--budget-bytes", "1000", "--graph", "synthetic:2000,20", "--hidden", "16"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("infeasible"));
}

#[test]
fn feature_and_weight_files_and_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        model: ModelKind::Gat,
        num_layers: 2,
        hidden_dim: 4,
        chunk_width: 4,
        scheme: Scheme::Coo,
    };
    let features = chunkgnn::models::random_features::<f32>(50, 6, 3);
    let fpath = dir.path().join("x.bin");
    save_feature_file(&features, &fpath).unwrap();
    let manifest = save_weights(ModelKind::Gat, &init_weights::<f32>(&cfg, 6, 9), dir.path().join("w")).unwrap();
    let log = dir.path().join("events.txt");
    let out = dir.path().join("r.json");
    let o = chunkgnn(&[
        "run", "--model", "gat", "--graph", "synthetic:50,3", "--hidden", "4", "--chunk-width", "1", "--reps", "1",
        "--features", fpath.to_str().unwrap(), "--weights", manifest.to_str().unwrap(), "--event-log",
        log.to_str().unwrap(), "--format", "json", "--out", out.to_str().unwrap(),
    ]);
    stdout(&o);
    let events = std::fs::read_to_string(&log).unwrap();
    assert!(events.lines().next().unwrap().starts_with("alloc "));
    assert!(events.lines().all(|l| l.starts_with("alloc ") || l.starts_with("free ")));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);

    // weights that do not match the feature width are rejected
    let o = chunkgnn(&[
        "run", "--model", "gat", "--graph", "synthetic:50,3", "--hidden", "4", "--reps", "1", "--weights",
        manifest.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn rejects_bad_flags() {
    assert!(!chunkgnn(&["run", "--graph", "synthetic:10,1", "--hidden", "4", "--chunk-width", "5"]).status.success());
    assert!(!chunkgnn(&["run", "--graph", "synthetic:10,1", "--model", "gin"]).status.success());
    assert!(!chunkgnn(&["run", "--graph", "synthetic:10,1", "--chunk-width", "auto"]).status.success());
}
