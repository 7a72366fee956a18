use std::collections::BTreeSet;
use std::fs;

use serde::{Deserialize, Serialize};

use super::config::{CalibrationSpec, EvalSpec, ExperimentConfig};
use crate::data::{
    load_jsonl, prompt_tokens, record_tokens, sample_calibration, sample_indices, CalibrationSet, Record,
};
use crate::error::{Error, Result};
use crate::judge::{aggregate_scores, ChatTransport, HttpTransport, Judge, JudgeAggregate, JudgeCache, MockJudgeTransport};
use crate::metrics::{
    dataset_cross_entropy, exact_match, model_js_divergence, perplexity, relative_change, rouge1_f1, token_f1,
};
use crate::model::{capture_layer_inputs, detokenize, greedy_generate, load_checkpoint, TokenSeq, Transformer, EOS};
use crate::par;
use crate::pruning::{prune, ActivationStats, Method, SparseGptOptions};

/// One experiment result. `rel_*` are percentage changes against the base
/// row of the same table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub sparsity: f64,
    pub calibration: String,
    pub cross_entropy: f64,
    pub perplexity: f64,
    pub js_divergence: f64,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub rouge1: Option<f64>,
    pub rel_perplexity: f64,
    pub rel_em: Option<f64>,
    pub rel_f1: Option<f64>,
    pub rel_rouge1: Option<f64>,
    pub judge_accuracy: Option<f64>,
    pub judge_completeness: Option<f64>,
    pub judge_relevance: Option<f64>,
}

/// Label used in the `method` column for the unpruned model.
pub const BASE_METHOD: &str = "base";
/// `calibration` column value for rows that used no calibration data.
pub const NO_CALIBRATION: &str = "none";

/// Evaluation records with their tokenized reference sequences.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub name: String,
    pub records: Vec<Record>,
    /// Prompt plus reference output, for cross-entropy and divergence.
    pub sequences: Vec<TokenSeq>,
    pub max_new_tokens: usize,
}

impl EvalSet {
    pub fn from_records(name: &str, records: Vec<Record>, max_len: usize, max_new_tokens: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        if max_new_tokens >= max_len {
            return Err(Error::Config(format!(
                "max_new_tokens {max_new_tokens} leaves no room for a prompt in context {max_len}"
            )));
        }
        let sequences = records.iter().map(|r| record_tokens(r, max_len)).collect();
        Ok(Self {
            name: name.to_string(),
            records,
            sequences,
            max_new_tokens,
        })
    }

    /// Loads `spec.path` and draws `min(n, available)` records with the
    /// spec's seed (or `default_seed`).
    pub fn load(spec: &EvalSpec, default_seed: u64, max_len: usize) -> Result<Self> {
        let all = load_jsonl(&spec.path, spec.format)?;
        let n = spec.n.min(all.len());
        let idx = sample_indices(all.len(), n, spec.seed.unwrap_or(default_seed))?;
        let records = idx.into_iter().map(|i| all[i].clone()).collect();
        Self::from_records(&spec.label(), records, max_len, spec.max_new_tokens)
    }
}

/// Loads and samples a calibration source.
pub fn load_calibration(spec: &CalibrationSpec, default_seed: u64, max_len: usize) -> Result<CalibrationSet> {
    let records = load_jsonl(&spec.path, spec.format)?;
    let len = spec.max_len.unwrap_or(max_len).min(max_len);
    sample_calibration(&records, spec.n, spec.seed.unwrap_or(default_seed), len, &spec.label())
}

/// Judge plus the number of eval records it scores.
pub struct JudgeRun {
    pub judge: Judge,
    pub n: usize,
}

impl JudgeRun {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Option<Self>> {
        let Some(spec) = &cfg.judge else { return Ok(None) };
        let transport: Box<dyn ChatTransport> = if spec.mock {
            Box::new(MockJudgeTransport)
        } else {
            Box::new(HttpTransport::new(&spec.client))
        };
        let cache = match cfg.judge_cache_path() {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                JudgeCache::open(&p)?
            }
            None => JudgeCache::in_memory(),
        };
        Ok(Some(Self {
            judge: Judge::new(spec.client.clone(), transport, cache)?,
            n: spec.n,
        }))
    }
}

/// Metrics of one model on one eval set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub cross_entropy: f64,
    pub perplexity: f64,
    pub js_divergence: f64,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub rouge1: Option<f64>,
    pub judge: Option<JudgeAggregate>,
}

/// Greedy continuation of an instruction prompt, decoded and trimmed.
pub fn generate_answer(model: &Transformer, rec: &crate::data::InstructionRecord, max_new: usize) -> Result<String> {
    let prompt = prompt_tokens(rec, model.config.max_seq_len, max_new);
    let out = greedy_generate(model, &prompt, max_new)?;
    let mut new = &out.0[prompt.len()..];
    if new.last() == Some(&EOS) {
        new = &new[..new.len() - 1];
    }
    Ok(String::from_utf8_lossy(&detokenize(new)).trim().to_string())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Evaluates `model` against `base` on `eval`. Text metrics cover the
/// instruction records only and are `None` when there are none.
pub fn evaluate_model(
    base: &Transformer,
    model: &Transformer,
    eval: &EvalSet,
    judge: Option<&JudgeRun>,
) -> Result<ModelMetrics> {
    let cross_entropy = dataset_cross_entropy(model, &eval.sequences)?.mean()?;
    let js_divergence = if std::ptr::eq(base, model) {
        0.0
    } else {
        model_js_divergence(base, model, &eval.sequences)?
    };
    let instr: Vec<(usize, &crate::data::InstructionRecord)> = eval
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_instruction().map(|x| (i, x)))
        .collect();
    let answers = par::map(&instr, |(_, rec)| generate_answer(model, rec, eval.max_new_tokens))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (em, f1, rouge1) = if instr.is_empty() {
        (None, None, None)
    } else {
        let score = |f: fn(&str, &str) -> f64| {
            let v: Vec<f64> = instr.iter().zip(&answers).map(|((_, r), a)| f(a, &r.output)).collect();
            Some(mean(&v))
        };
        (score(exact_match), score(token_f1), score(rouge1_f1))
    };
    let judge = match judge {
        Some(j) if !instr.is_empty() && j.n > 0 => {
            let items: Vec<_> = instr
                .iter()
                .zip(&answers)
                .take(j.n)
                .map(|((i, r), a)| (format!("{}/{i}", eval.name), (*r).clone(), a.clone()))
                .collect();
            let scores = j.judge.score_many(&items).into_iter().collect::<Result<Vec<_>>>()?;
            Some(aggregate_scores(&scores)?)
        }
        _ => None,
    };
    Ok(ModelMetrics {
        cross_entropy,
        perplexity: perplexity(cross_entropy),
        js_divergence,
        em,
        f1,
        rouge1,
        judge,
    })
}

fn rel(value: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (value, base) {
        (Some(v), Some(b)) => relative_change(v, b).ok(),
        _ => None,
    }
}

/// Builds a report row; relative columns are computed against `base`.
pub fn make_row(method: &str, sparsity: f64, calibration: &str, m: &ModelMetrics, base: &ModelMetrics) -> SweepRow {
    SweepRow {
        method: method.to_string(),
        sparsity,
        calibration: calibration.to_string(),
        cross_entropy: m.cross_entropy,
        perplexity: m.perplexity,
        js_divergence: m.js_divergence,
        em: m.em,
        f1: m.f1,
        rouge1: m.rouge1,
        rel_perplexity: relative_change(m.perplexity, base.perplexity).unwrap_or(f64::NAN),
        rel_em: rel(m.em, base.em),
        rel_f1: rel(m.f1, base.f1),
        rel_rouge1: rel(m.rouge1, base.rouge1),
        judge_accuracy: m.judge.as_ref().map(|j| j.accuracy),
        judge_completeness: m.judge.as_ref().map(|j| j.completeness),
        judge_relevance: m.judge.as_ref().map(|j| j.relevance),
    }
}

fn load_base(cfg: &ExperimentConfig) -> Result<Transformer> {
    if !cfg.checkpoint.exists() {
        return Err(Error::CheckpointMissing(cfg.checkpoint.clone()));
    }
    load_checkpoint(&cfg.checkpoint)
}

fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        f()
    } else {
        par::with_workers(workers, f)
    }
}

fn unique_methods(methods: &[Method]) -> Vec<Method> {
    methods.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Prunes `base` with every (method, sparsity) cell and evaluates each copy.
/// Calibration statistics are captured once and shared by all methods.
/// Rows: the base row first, then cells sorted by (method, sparsity).
pub fn sweep_model(
    base: &Transformer,
    methods: &[Method],
    sparsities: &[f64],
    calibration: Option<&CalibrationSet>,
    eval: &EvalSet,
    opts: SparseGptOptions,
    judge: Option<&JudgeRun>,
) -> Result<Vec<SweepRow>> {
    let methods = unique_methods(methods);
    let stats: Option<ActivationStats> = match calibration {
        Some(c) if methods.iter().any(|m| m.needs_calibration()) => Some(capture_layer_inputs(base, &c.sequences)?),
        _ => None,
    };
    let calib_name = calibration.map(|c| c.source_name.as_str()).unwrap_or(NO_CALIBRATION);
    let base_metrics = evaluate_model(base, base, eval, judge)?;
    let cells: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| sparsities.iter().map(move |&s| (m, s)))
        .collect();
    let results = par::map(&cells, |&(method, sparsity)| -> Result<ModelMetrics> {
        let (_, pruned) = prune(base, method, sparsity, stats.as_ref(), opts)?;
        evaluate_model(base, &pruned, eval, judge)
    });
    let mut rows = vec![make_row(BASE_METHOD, 0.0, NO_CALIBRATION, &base_metrics, &base_metrics)];
    for (&(method, sparsity), res) in cells.iter().zip(results) {
        let label = if method.needs_calibration() { calib_name } else { NO_CALIBRATION };
        rows.push(make_row(method.name(), sparsity, label, &res?, &base_metrics));
    }
    Ok(rows)
}

/// Full sweep described by `cfg`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    in_pool(cfg.workers, || {
        let base = load_base(cfg)?;
        let max_len = base.config.max_seq_len;
        let eval = EvalSet::load(&cfg.eval, cfg.seed, max_len)?;
        let calibration = if cfg.methods.iter().any(|m| m.needs_calibration()) {
            Some(load_calibration(&cfg.calibration, cfg.seed, max_len)?)
        } else {
            None
        };
        let judge = JudgeRun::from_config(cfg)?;
        sweep_model(
            &base,
            &cfg.methods,
            &cfg.sparsities,
            calibration.as_ref(),
            &eval,
            cfg.sparsegpt_options(),
            judge.as_ref(),
        )
    })
}

/// Rows of a calibration comparison for one eval set.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibTable {
    pub eval_set: String,
    pub rows: Vec<SweepRow>,
}

/// Prunes at one sparsity with each calibration set and evaluates every
/// pruned model on each eval set. Each table starts with its base row,
/// followed by (method, calibration) rows in input order.
pub fn compare_calibrations(
    base: &Transformer,
    methods: &[Method],
    sparsity: f64,
    calibrations: &[&CalibrationSet],
    evals: &[&EvalSet],
    opts: SparseGptOptions,
    judge: Option<&JudgeRun>,
) -> Result<Vec<CalibTable>> {
    let methods = unique_methods(methods);
    if let Some(m) = methods.iter().find(|m| !m.needs_calibration()) {
        return Err(Error::Config(format!(
            "{m} ignores calibration data and cannot take part in a calibration comparison"
        )));
    }
    let stats = par::map(calibrations, |c| capture_layer_inputs(base, &c.sequences))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..calibrations.len()).map(move |c| (m, c)))
        .collect();
    let pruned = par::map(&cells, |&(m, c)| prune(base, m, sparsity, Some(&stats[c]), opts).map(|p| p.1))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut tables = Vec::with_capacity(evals.len());
    for eval in evals {
        let base_metrics = evaluate_model(base, base, eval, judge)?;
        let metrics = par::map(&pruned, |p| evaluate_model(base, p, eval, judge));
        let mut rows = vec![make_row(BASE_METHOD, 0.0, NO_CALIBRATION, &base_metrics, &base_metrics)];
        for (&(m, c), res) in cells.iter().zip(metrics) {
            rows.push(make_row(m.name(), sparsity, &calibrations[c].source_name, &res?, &base_metrics));
        }
        tables.push(CalibTable {
            eval_set: eval.name.clone(),
            rows,
        });
    }
    Ok(tables)
}

/// Calibration A/B from a config: `calib_a` against `calib_b`, evaluated on
/// the primary eval set and the held-out one.
pub fn run_calibration_comparison(
    cfg: &ExperimentConfig,
    calib_a: &CalibrationSpec,
    calib_b: &CalibrationSpec,
) -> Result<Vec<CalibTable>> {
    cfg.validate()?;
    let ab = cfg
        .calib_ab
        .as_ref()
        .ok_or_else(|| Error::Config("calib_ab section is required for a calibration comparison".into()))?;
    if let Some(m) = cfg.methods.iter().find(|m| !m.needs_calibration()) {
        return Err(Error::Config(format!(
            "{m} ignores calibration data and cannot take part in a calibration comparison"
        )));
    }
    in_pool(cfg.workers, || {
        let base = load_base(cfg)?;
        let max_len = base.config.max_seq_len;
        let a = load_calibration(calib_a, cfg.seed, max_len)?;
        let b = load_calibration(calib_b, cfg.seed, max_len)?;
        let eval_a = EvalSet::load(&cfg.eval, cfg.seed, max_len)?;
        let eval_b = EvalSet::load(&ab.eval_b, cfg.seed, max_len)?;
        let judge = JudgeRun::from_config(cfg)?;
        compare_calibrations(
            &base,
            &cfg.methods,
            ab.sparsity,
            &[&a, &b],
            &[&eval_a, &eval_b],
            cfg.sparsegpt_options(),
            judge.as_ref(),
        )
    })
}
