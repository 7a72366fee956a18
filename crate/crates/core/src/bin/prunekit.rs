use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use prunekit::data::toy::{instruction_records, raw_records, training_corpus, Family};
use prunekit::data::{load_jsonl, sample_calibration, write_jsonl, DataFormat, InstructionRecord};
use prunekit::harness::{
    emit_report, evaluate_model, make_row, read_csv_report, run_calibration_comparison, run_sweep, write_reports,
    EvalSet, EvalSpec, ExperimentConfig, ReportFormat,
};
use prunekit::judge::{
    aggregate_scores, ChatTransport, HttpTransport, Judge, JudgeCache, JudgeConfig, MockJudgeTransport,
};
use prunekit::model::{capture_layer_inputs, load_checkpoint, save_checkpoint, train_toy_with_curve, TrainHyper};
use prunekit::pruning::{measure_sparsity, prune, save_mask, Method, SparseGptOptions};
use prunekit::{par, Error, ModelConfig, Result};

#[derive(Parser)]
#[command(name = "prunekit", version, about = "One-shot pruning and evaluation of a toy transformer")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a toy model and save it as a checkpoint.
    TrainToy(TrainArgs),
    /// Write synthetic instruction and raw-text datasets as JSONL.
    MakeToyData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Prune a checkpoint with one method at one sparsity.
    Prune(PruneArgs),
    /// Evaluate a (pruned) model against its base model.
    Eval(EvalArgs),
    /// Run a sparsity sweep from a TOML/JSON experiment config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare two calibration sources (needs a `calib_ab` config section).
    CalibAb {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score generated responses with an LLM judge.
    Judge(JudgeArgs),
    /// Convert a CSV report to another format.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    /// Training text; a synthetic corpus is generated when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 400_000)]
    corpus_bytes: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 512)]
    d_ff: usize,
    #[arg(long, default_value_t = 256)]
    max_seq_len: usize,
    /// Optional CSV of per-step training loss.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    sparsity: f64,
    /// Calibration JSONL (required for sparsegpt and wanda).
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value = "instruction")]
    calib_format: DataFormat,
    #[arg(long, default_value_t = 128)]
    calib_n: usize,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    block_size: usize,
    #[arg(long, default_value_t = 0.01)]
    damp_ratio: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the keep/prune mask.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eval_set: PathBuf,
    #[arg(long, default_value = "instruction")]
    format: DataFormat,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    max_new_tokens: usize,
}

#[derive(clap::Args)]
struct JudgeArgs {
    /// Base URL of a chat-completions API (`{endpoint}/chat/completions`).
    #[arg(long, required_unless_present = "mock")]
    endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4-0613")]
    model: String,
    /// JSONL of `{instruction, input, output, generated[, id]}`.
    #[arg(long)]
    input: PathBuf,
    /// Use the offline overlap-based scorer instead of HTTP.
    #[arg(long)]
    mock: bool,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    retries: usize,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Deserialize)]
struct GeneratedRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(flatten)]
    record: InstructionRecord,
    generated: String,
}

fn train(a: TrainArgs) -> Result<()> {
    let config = ModelConfig {
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        d_ff: a.d_ff,
        max_seq_len: a.max_seq_len,
        seed: a.seed,
        ..ModelConfig::default()
    };
    let corpus = match &a.corpus {
        Some(p) => fs::read(p).map_err(|_| Error::DatasetMissing(p.clone()))?,
        None => training_corpus(a.corpus_bytes, a.seed),
    };
    let hyper = TrainHyper {
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        seed: a.seed,
    };
    let out = train_toy_with_curve(config, &corpus, hyper)?;
    save_checkpoint(&out.model, &a.out)?;
    if let Some(p) = &a.loss_curve {
        let mut s = String::from("step,loss\n");
        for (i, l) in out.loss_curve.iter().enumerate() {
            s.push_str(&format!("{i},{l:.6}\n"));
        }
        fs::write(p, s).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    let tail = out.loss_curve.iter().rev().take(50).copied().collect::<Vec<_>>();
    let last = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    println!(
        "trained {} params for {} steps; final loss {last:.4}; saved {}",
        out.model.num_params(),
        a.steps,
        a.out.display()
    );
    Ok(())
}

fn make_toy_data(dir: &Path, n: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    write_jsonl(&dir.join("numeric.jsonl"), &instruction_records(Family::Numeric, n, seed))?;
    write_jsonl(&dir.join("words.jsonl"), &instruction_records(Family::Words, n, seed.wrapping_add(1)))?;
    write_jsonl(&dir.join("raw.jsonl"), &raw_records(n, seed.wrapping_add(2)))?;
    println!("wrote numeric.jsonl, words.jsonl, raw.jsonl ({n} records each) to {}", dir.display());
    Ok(())
}

fn load_model(p: &Path) -> Result<prunekit::Transformer> {
    if !p.exists() {
        return Err(Error::CheckpointMissing(p.to_path_buf()));
    }
    load_checkpoint(p)
}

fn prune_cmd(a: PruneArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let stats = if a.method.needs_calibration() {
        let path = a
            .calib
            .as_ref()
            .ok_or_else(|| Error::Config(format!("--calib is required for {}", a.method)))?;
        let records = load_jsonl(path, a.calib_format)?;
        let max_len = a.max_len.unwrap_or(model.config.max_seq_len).min(model.config.max_seq_len);
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let calib = sample_calibration(&records, a.calib_n, a.seed, max_len, &name)?;
        Some(capture_layer_inputs(&model, &calib.sequences)?)
    } else {
        None
    };
    let opts = SparseGptOptions {
        block_size: a.block_size,
        damp_ratio: a.damp_ratio,
    };
    let (mask, pruned) = prune(&model, a.method, a.sparsity, stats.as_ref(), opts)?;
    save_checkpoint(&pruned, &a.out)?;
    if let Some(p) = &a.mask_out {
        save_mask(&mask, p)?;
    }
    println!(
        "{} at target {:.4}: achieved {:.4} over prunable weights; saved {}",
        a.method,
        a.sparsity,
        measure_sparsity(&pruned),
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let base = load_model(&a.base)?;
    let model = load_model(&a.model)?;
    if base.config != model.config {
        return Err(Error::Config("base and model checkpoints have different configs".into()));
    }
    let spec = EvalSpec {
        path: a.eval_set,
        format: a.format,
        n: a.n,
        seed: Some(a.seed),
        max_new_tokens: a.max_new_tokens,
        name: None,
    };
    let eval = EvalSet::load(&spec, a.seed, base.config.max_seq_len)?;
    let base_m = evaluate_model(&base, &base, &eval, None)?;
    let m = evaluate_model(&base, &model, &eval, None)?;
    let row = make_row("model", measure_sparsity(&model), "", &m, &base_m);
    let out = json!({
        "eval_set": eval.name,
        "records": eval.records.len(),
        "sparsity": row.sparsity,
        "cross_entropy": row.cross_entropy,
        "perplexity": row.perplexity,
        "js_divergence": row.js_divergence,
        "em": row.em,
        "f1": row.f1,
        "rouge1": row.rouge1,
        "base_perplexity": base_m.perplexity,
        "rel_perplexity": row.rel_perplexity,
        "rel_em": row.rel_em,
        "rel_f1": row.rel_f1,
        "rel_rouge1": row.rel_rouge1,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn with_cli_workers(cfg: &mut ExperimentConfig, workers: usize) {
    if workers > 0 {
        cfg.workers = workers;
    }
}

fn sweep_cmd(config: &Path, workers: usize) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    with_cli_workers(&mut cfg, workers);
    let rows = run_sweep(&cfg)?;
    write_reports(&rows, &cfg.output_dir, "sweep")?;
    println!("{} rows written to {}", rows.len(), cfg.output_dir.join("sweep.csv").display());
    Ok(())
}

fn calib_ab_cmd(config: &Path, workers: usize) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    with_cli_workers(&mut cfg, workers);
    let calib_b = cfg
        .calib_ab
        .as_ref()
        .map(|ab| ab.calib_b.clone())
        .ok_or_else(|| Error::Config("config has no calib_ab section".into()))?;
    let tables = run_calibration_comparison(&cfg, &cfg.calibration, &calib_b)?;
    for t in &tables {
        let stem = format!("calib_ab_{}", t.eval_set);
        write_reports(&t.rows, &cfg.output_dir, &stem)?;
        println!("eval set {}: {}", t.eval_set, cfg.output_dir.join(format!("{stem}.csv")).display());
    }
    Ok(())
}

fn judge_cmd(a: JudgeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(|_| Error::DatasetMissing(a.input.clone()))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: GeneratedRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: a.input.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        items.push((r.id.unwrap_or_else(|| i.to_string()), r.record, r.generated));
    }
    let mut cfg = JudgeConfig::new(a.endpoint.clone().unwrap_or_default(), a.model);
    cfg.retries = a.retries;
    cfg.max_in_flight = a.max_in_flight;
    cfg.timeout_secs = a.timeout_secs;
    let transport: Box<dyn ChatTransport> = if a.mock {
        Box::new(MockJudgeTransport)
    } else {
        Box::new(HttpTransport::new(&cfg))
    };
    let cache = match &a.cache {
        Some(p) => JudgeCache::open(p)?,
        None => JudgeCache::in_memory(),
    };
    let judge = Judge::new(cfg, transport, cache)?;
    let scores = judge.score_many(&items).into_iter().collect::<Result<Vec<_>>>()?;
    println!("{}", aggregate_scores(&scores)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    let go = move || match cli.cmd {
        Cmd::TrainToy(a) => train(a),
        Cmd::MakeToyData { out_dir, n, seed } => make_toy_data(&out_dir, n, seed),
        Cmd::Prune(a) => prune_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Sweep { config } => sweep_cmd(&config, workers),
        Cmd::CalibAb { config } => calib_ab_cmd(&config, workers),
        Cmd::Judge(a) => judge_cmd(a),
        Cmd::Report { input, format, out } => {
            let rows = read_csv_report(&input)?;
            emit_report(&rows, format, &out)
        }
    };
    if workers > 0 {
        par::with_workers(workers, go)
    } else {
        go()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
