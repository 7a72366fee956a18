use std::fs;
use std::path::Path;

use prunekit::data::toy::{instruction_records, raw_records, Family};
use prunekit::data::write_jsonl;
use prunekit::harness::{
    csv_string, read_csv_report, run_calibration_comparison, run_sweep, write_reports, ExperimentConfig, BASE_METHOD,
};
use prunekit::metrics::relative_change;
use prunekit::model::save_checkpoint;
use prunekit::{Error, ModelConfig, Transformer};

fn setup(dir: &Path) {
    let model = Transformer::new(ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 64,
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    save_checkpoint(&model, &dir.join("model.ntc")).unwrap();
    write_jsonl(&dir.join("numeric.jsonl"), &instruction_records(Family::Numeric, 60, 1)).unwrap();
    write_jsonl(&dir.join("words.jsonl"), &instruction_records(Family::Words, 60, 2)).unwrap();
    write_jsonl(&dir.join("raw.jsonl"), &raw_records(60, 3)).unwrap();
}

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
checkpoint = "model.ntc"
methods = ["wanda", "magnitude", "sparsegpt"]
sparsities = [0.0, 0.3, 0.6]
output_dir = "out"
seed = 5
block_size = 8

[calibration]
path = "raw.jsonl"
format = "raw"
n = 12

[eval]
path = "numeric.jsonl"
n = 10
max_new_tokens = 4

[judge]
base_url = "unused"
model_name = "mock"
mock = true
n = 4
{extra}
"#
    );
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    ExperimentConfig::load(&p).unwrap()
}

#[test]
fn sweep_rows_are_sorted_and_consistent_with_base() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let rows = run_sweep(&config(dir.path(), "")).unwrap();
    assert_eq!(rows.len(), 1 + 3 * 3);
    assert_eq!(rows[0].method, BASE_METHOD);
    assert_eq!(rows[0].js_divergence, 0.0);
    let order: Vec<(&str, f64)> = rows[1..].iter().map(|r| (r.method.as_str(), r.sparsity)).collect();
    let mut sorted = order.clone();
    sorted.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
    assert_eq!(order, sorted);
    let base = &rows[0];
    for r in &rows {
        let rel = relative_change(r.perplexity, base.perplexity).unwrap();
        assert!((rel - r.rel_perplexity).abs() < 0.01);
        if let (Some(v), Some(b), Some(rv)) = (r.f1, base.f1, r.rel_f1) {
            assert!((relative_change(v, b).unwrap() - rv).abs() < 0.01);
        }
        assert!(r.judge_accuracy.is_some());
        let expected_calib = if r.method == "magnitude" || r.method == BASE_METHOD { "none" } else { "raw" };
        assert_eq!(r.calibration, expected_calib);
        if r.sparsity == 0.0 {
            assert_eq!(r.js_divergence, 0.0, "{} at 0", r.method);
            assert!(r.rel_perplexity.abs() < 1e-9);
        }
    }
}

#[test]
fn zero_sparsity_gives_one_base_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut cfg = config(dir.path(), "");
    cfg.sparsities = vec![0.0];
    cfg.judge = None;
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.js_divergence, 0.0);
        assert_eq!(r.rel_perplexity, 0.0);
        assert!(r.rel_f1.is_none_or(|v| v == 0.0));
        assert!(r.judge_accuracy.is_none());
    }
}

#[test]
fn reports_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut outputs = Vec::new();
    for workers in [1, 4, 1] {
        let mut cfg = config(dir.path(), "");
        cfg.workers = workers;
        let rows = run_sweep(&cfg).unwrap();
        let out = dir.path().join(format!("w{workers}"));
        write_reports(&rows, &out, "sweep").unwrap();
        outputs.push(fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let back = read_csv_report(&dir.path().join("w4/sweep.csv")).unwrap();
    assert_eq!(csv_string(&back).unwrap().as_bytes(), outputs[1].as_slice());
}

const AB: &str = r#"
[calib_ab]
sparsity = 0.5
[calib_ab.calib_b]
path = "words.jsonl"
n = 12
[calib_ab.eval_b]
path = "words.jsonl"
n = 8
max_new_tokens = 4
"#;

#[test]
fn calibration_comparison_layout_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut cfg = config(dir.path(), AB);
    cfg.judge = None;
    let err = run_calibration_comparison(&cfg, &cfg.calibration, &cfg.calib_ab.as_ref().unwrap().calib_b).unwrap_err();
    assert!(err.is_config() && err.to_string().contains("magnitude"), "{err}");

    cfg.methods.retain(|m| m.needs_calibration());
    let b = cfg.calib_ab.as_ref().unwrap().calib_b.clone();
    let tables = run_calibration_comparison(&cfg, &cfg.calibration, &b).unwrap();
    assert_eq!(tables.len(), 2);
    assert_eq!(tables[0].eval_set, "numeric");
    assert_eq!(tables[1].eval_set, "words");
    for t in &tables {
        let labels: Vec<(&str, &str)> = t.rows.iter().map(|r| (r.method.as_str(), r.calibration.as_str())).collect();
        assert_eq!(
            labels,
            [("base", "none"), ("sparsegpt", "raw"), ("sparsegpt", "words"), ("wanda", "raw"), ("wanda", "words")]
        );
    }

    // Identical calibration sources give identical metrics.
    let a = cfg.calibration.clone();
    let same = run_calibration_comparison(&cfg, &a, &a).unwrap();
    for t in &same {
        for pair in t.rows[1..].chunks(2) {
            assert!((pair[0].cross_entropy - pair[1].cross_entropy).abs() <= 1e-9);
            assert!((pair[0].js_divergence - pair[1].js_divergence).abs() <= 1e-9);
            assert_eq!(pair[0].f1, pair[1].f1);
        }
    }
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let mut cfg = config(dir.path(), "");
    cfg.checkpoint = dir.path().join("nope.ntc");
    assert!(matches!(run_sweep(&cfg), Err(Error::CheckpointMissing(_))));
    let mut cfg = config(dir.path(), "");
    cfg.eval.path = dir.path().join("nope.jsonl");
    let err = run_sweep(&cfg).unwrap_err();
    assert!(matches!(err, Error::DatasetMissing(_)) && err.is_config());
}
