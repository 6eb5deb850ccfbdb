use std::fs;
use std::path::Path;

use wmgeom::pipeline::{emit_report, run_pipeline, svg, verify_report, PipelineConfig, RunOptions};
use wmgeom::stimulus::GateReport;
use wmgeom::Error;

const SMOKE: &str = r#"
seed = 5

[train]
hidden = 16
max_iters = 200
milestones = [150]

[[models]]
arch = "gru"
diet = "mtmf"

[record]
n_per_task = 64

[eval]
n_per_task = 32

[analysis]
bootstrap = 5
pca_dim = 8
causal_points = 7

[analysis.cv]
folds = 3
"#;

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_deterministic_and_cached() {
    let cfg = PipelineConfig::from_toml(SMOKE).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let ra = run_pipeline(&cfg, &RunOptions { out: a.path().to_path_buf(), quiet: true }).unwrap();
    assert!(start.elapsed().as_secs() < 300, "smoke run took {:?}", start.elapsed());
    let rb = run_pipeline(&cfg, &RunOptions { out: b.path().to_path_buf(), quiet: true }).unwrap();
    assert_eq!(ra.manifest.content_hash(), rb.manifest.content_hash());
    assert_eq!(tree(a.path()), tree(b.path()));

    let before = tree(a.path());
    let again = run_pipeline(&cfg, &RunOptions { out: a.path().to_path_buf(), quiet: true }).unwrap();
    assert!(again.manifest.stages.iter().all(|s| s.cached));
    assert_eq!(tree(a.path()), before);
    verify_report(&again.report).unwrap();
}

#[test]
fn config_errors_surface_before_work() {
    let bad = SMOKE.replace("arch = \"gru\"", "arch = \"transformer\"");
    assert!(matches!(PipelineConfig::from_toml(&bad), Err(Error::Config(_))));
    let unknown = format!("{SMOKE}\n[extra]\nx = 1\n");
    assert!(matches!(PipelineConfig::from_toml(&unknown), Err(Error::Config(_))));
    let stsf = SMOKE.replace("diet = \"mtmf\"", "diet = \"stsf\"");
    assert!(matches!(PipelineConfig::from_toml(&stsf), Err(Error::Config(_))));
}

#[test]
fn empty_report_says_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let gate = GateReport { category: 1.0, identity: 0.995, location: 1.0, threshold: 0.99 };
    let bundle = emit_report(dir.path(), &gate, &[]).unwrap();
    assert_eq!(bundle.summary, "no data");
    assert!(bundle.absent.iter().any(|a| a == "orthogonalization"));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"], "no data");
}

#[test]
fn heatmap_cells_equal_table_cells() {
    let m = ndarray::array![[0.9, 0.4, 0.3], [0.5, 0.95, 0.2], [0.1, 0.25, 0.875]];
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let body = svg::heatmap("t", &names, &names, &m);
    let vals = svg::parse_values(&body);
    assert_eq!(vals.len(), 9);
    for (v, w) in vals.iter().zip(m.iter()) {
        assert_eq!(format!("{v:.3}"), format!("{w:.3}"));
    }
}

#[test]
fn tampered_plot_fails_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let gate = GateReport { category: 1.0, identity: 0.995, location: 1.0, threshold: 0.99 };
    let bundle = emit_report(dir.path(), &gate, &[]).unwrap();
    let p = dir.path().join("gate.svg");
    let body = fs::read_to_string(&p).unwrap().replace(">0.995<", ">0.123<");
    fs::write(&p, body).unwrap();
    assert!(matches!(verify_report(&bundle), Err(Error::Integrity { .. })));
}
