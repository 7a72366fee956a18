use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DataFormat;
use crate::error::{Error, Result};
use crate::judge::JudgeConfig;
use crate::pruning::{check_sparsity, Method, SparseGptOptions};

fn default_calib_n() -> usize {
    128
}
fn default_eval_n() -> usize {
    5000
}
fn default_max_new() -> usize {
    32
}
fn default_judge_n() -> usize {
    100
}
fn default_methods() -> Vec<Method> {
    vec![Method::Magnitude, Method::Sparsegpt, Method::Wanda]
}
fn default_sparsities() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_block_size() -> usize {
    SparseGptOptions::default().block_size
}
fn default_damp_ratio() -> f64 {
    SparseGptOptions::default().damp_ratio
}
fn default_ab_sparsity() -> f64 {
    0.5
}

/// Calibration source. `seed` defaults to the experiment seed, `max_len`
/// to the model context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default = "default_calib_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_len: Option<usize>,
    /// Label for the report's `calibration` column; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
}

impl CalibrationSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| stem(&self.path))
    }
}

/// Evaluation set. `n` is capped at the number of available records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default = "default_eval_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub name: Option<String>,
}

impl EvalSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| stem(&self.path))
    }
}

/// Judge settings. With `mock = true` the offline scorer is used and
/// `base_url` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSpec {
    #[serde(flatten)]
    pub client: JudgeConfig,
    #[serde(default)]
    pub mock: bool,
    /// Number of eval records (in eval order) sent to the judge.
    #[serde(default = "default_judge_n")]
    pub n: usize,
    /// JSONL cache; defaults to `<output_dir>/judge_cache.jsonl`.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

/// Second calibration source and held-out eval set for the A/B comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibAbSpec {
    pub calib_b: CalibrationSpec,
    pub eval_b: EvalSpec,
    #[serde(default = "default_ab_sparsity")]
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub checkpoint: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_sparsities")]
    pub sparsities: Vec<f64>,
    pub calibration: CalibrationSpec,
    pub eval: EvalSpec,
    #[serde(default)]
    pub judge: Option<JudgeSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_damp_ratio")]
    pub damp_ratio: f64,
    #[serde(default)]
    pub calib_ab: Option<CalibAbSpec>,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Reads a TOML (`.toml`) or JSON config. Relative paths inside the file
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: ExperimentConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.checkpoint);
        resolve(base, &mut self.calibration.path);
        resolve(base, &mut self.eval.path);
        resolve(base, &mut self.output_dir);
        if let Some(j) = &mut self.judge {
            if let Some(c) = &mut j.cache {
                resolve(base, c);
            }
        }
        if let Some(ab) = &mut self.calib_ab {
            resolve(base, &mut ab.calib_b.path);
            resolve(base, &mut ab.eval_b.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("methods is empty".into());
        }
        if self.sparsities.is_empty() {
            return bad("sparsities is empty".into());
        }
        for &s in &self.sparsities {
            check_sparsity(s)?;
        }
        if self.sparsities.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sparsities must be strictly ascending".into());
        }
        if self.eval.n == 0 {
            return bad("eval.n must be at least 1".into());
        }
        if self.calibration.n == 0 && self.methods.iter().any(|m| m.needs_calibration()) {
            return bad("calibration.n must be at least 1".into());
        }
        if self.block_size == 0 {
            return bad("block_size must be at least 1".into());
        }
        if !(self.damp_ratio > 0.0) {
            return bad(format!("damp_ratio must be positive, got {}", self.damp_ratio));
        }
        if let Some(j) = &self.judge {
            j.client.validate()?;
        }
        if let Some(ab) = &self.calib_ab {
            check_sparsity(ab.sparsity)?;
            if ab.eval_b.n == 0 {
                return bad("calib_ab.eval_b.n must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn sparsegpt_options(&self) -> SparseGptOptions {
        SparseGptOptions {
            block_size: self.block_size,
            damp_ratio: self.damp_ratio,
        }
    }

    pub fn judge_cache_path(&self) -> Option<PathBuf> {
        let j = self.judge.as_ref()?;
        Some(j.cache.clone().unwrap_or_else(|| self.output_dir.join("judge_cache.jsonl")))
    }
}
