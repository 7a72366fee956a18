use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_judge_prompt, parse_judge_reply, JudgePrompt, JudgeScore};
use crate::data::InstructionRecord;
use crate::error::{Error, Result};
use crate::metrics::{rouge1_f1, token_f1};

/// Environment variable holding the judge API key.
pub const API_KEY_ENV: &str = "JUDGE_API_KEY";

fn default_in_flight() -> usize {
    4
}
fn default_retries() -> usize {
    2
}
fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl JudgeConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            max_in_flight: default_in_flight(),
            retries: default_retries(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("judge.max_in_flight must be at least 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(Error::Config("judge.model_name is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of `POST {base_url}/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, prompt: &JudgePrompt) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user.clone(),
                },
            ],
            temperature: 0.0,
        }
    }
}

/// Sends one chat request and returns the assistant's text.
///
/// Implementations return [`Error::Transport`] for retryable failures and
/// [`Error::Auth`] for rejected credentials.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Blocking HTTP client for OpenAI-style chat-completions endpoints.
pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    /// Reads the API key from [`API_KEY_ENV`] when set.
    pub fn new(cfg: &JudgeConfig) -> Self {
        Self::with_api_key(cfg, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_api_key(cfg: &JudgeConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
            agent,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if status == 401 || status == 403 {
            return Err(Error::Auth(format!("HTTP {status}: {body}")));
        }
        if !(200..300).contains(&status) {
            return Err(Error::Transport(format!("HTTP {status}: {body}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| Error::Transport(format!("bad JSON body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Transport("response has no choices[0].message.content".into()))
    }
}

fn section<'a>(user: &'a str, label: &str) -> &'a str {
    let marker = format!("### {label}\n");
    let Some(start) = user.find(&marker).map(|i| i + marker.len()) else {
        return "";
    };
    let rest = &user[start..];
    let end = rest.find("\n\n").unwrap_or(rest.len());
    &rest[..end]
}

/// Offline judge: scores by token overlap between the generated and ideal
/// responses found in the prompt. Deterministic.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockJudgeTransport;

impl ChatTransport for MockJudgeTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let user = request
            .messages
            .iter()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let ideal = section(user, "Ideal Response");
        let generated = section(user, "Generated Response");
        let f1 = token_f1(generated, ideal);
        let rouge = rouge1_f1(generated, ideal);
        let scale = |x: f64| 1 + (9.0 * x).round() as u8;
        let relevance = if generated.trim().is_empty() { 1 } else { scale(0.5 + 0.5 * rouge) };
        Ok(format!(
            "Accuracy: {}\nCompleteness: {}\nRelevance: {}\nFeedback: token F1 {f1:.3}, ROUGE-1 {rouge:.3}",
            scale(f1),
            scale(rouge),
            relevance
        ))
    }
}

/// One judged sample as persisted in the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequestRecord {
    pub cache_key: String,
    pub sample_id: String,
    pub model_name: String,
    pub prompt: JudgePrompt,
    pub raw_reply: String,
    pub score: JudgeScore,
    /// Requests sent, including retries.
    pub attempts: usize,
    /// Unix seconds.
    pub timestamp: u64,
}

pub fn cache_key(model_name: &str, prompt: &JudgePrompt) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(prompt.system.as_bytes());
    h.update([0u8]);
    h.update(prompt.user.as_bytes());
    hex::encode(h.finalize())
}

/// In-memory cache optionally backed by a JSONL file.
#[derive(Debug, Default)]
pub struct JudgeCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, JudgeRequestRecord>>,
}

impl JudgeCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records from `path` (if present); new records are
    /// appended to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JudgeRequestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                entries.insert(rec.cache_key.clone(), rec);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, key: &str) -> Option<JudgeRequestRecord> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&self, rec: JudgeRequestRecord) -> Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&rec).expect("serializable record");
            line.push(b'\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
        entries.insert(rec.cache_key.clone(), rec);
        Ok(())
    }
}

pub struct Judge {
    pub config: JudgeConfig,
    transport: Box<dyn ChatTransport>,
    cache: JudgeCache,
}

impl Judge {
    pub fn new(config: JudgeConfig, transport: Box<dyn ChatTransport>, cache: JudgeCache) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            cache,
        })
    }

    pub fn cache(&self) -> &JudgeCache {
        &self.cache
    }

    /// Scores one response: cache first, otherwise query with up to
    /// `retries` extra attempts on transport errors or unparseable replies.
    pub fn score_response(&self, sample_id: &str, rec: &InstructionRecord, generated: &str) -> Result<JudgeScore> {
        self.score_record(sample_id, rec, generated).map(|r| r.score)
    }

    pub fn score_record(
        &self,
        sample_id: &str,
        rec: &InstructionRecord,
        generated: &str,
    ) -> Result<JudgeRequestRecord> {
        let prompt = build_judge_prompt(rec, generated);
        let key = cache_key(&self.config.model_name, &prompt);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let request = ChatRequest::new(&self.config.model_name, &prompt);
        let max_attempts = self.config.retries + 1;
        let mut last_err = None;
        for attempt in 1..=max_attempts {
            let raw = match self.transport.complete(&request) {
                Ok(raw) => raw,
                Err(e @ Error::Auth(_)) => return Err(e),
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            match parse_judge_reply(&raw) {
                Ok(score) => {
                    let record = JudgeRequestRecord {
                        cache_key: key,
                        sample_id: sample_id.to_string(),
                        model_name: self.config.model_name.clone(),
                        prompt,
                        raw_reply: raw,
                        score,
                        attempts: attempt,
                        timestamp: SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map(|d| d.as_secs())
                            .unwrap_or(0),
                    };
                    self.cache.insert(record.clone())?;
                    return Ok(record);
                }
                Err(e) => {
                    last_err = Some(Error::ParseFailure {
                        attempts: attempt,
                        last: format!("{e}; reply: {raw:?}"),
                    })
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Scores many samples with at most `max_in_flight` concurrent requests.
    /// Results keep the input order.
    pub fn score_many(&self, items: &[(String, InstructionRecord, String)]) -> Vec<Result<JudgeScore>> {
        let workers = self.config.max_in_flight.min(items.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<JudgeScore>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let (id, rec, generated) = &items[i];
                    let res = self.score_response(id, rec, generated);
                    slots.lock().unwrap()[i] = Some(res);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_scores_perfect_answer_high() {
        let rec = InstructionRecord { instruction: "Add".into(), input: "2 2".into(), output: "4".into() };
        let req = ChatRequest::new("m", &build_judge_prompt(&rec, "4"));
        let s = parse_judge_reply(&MockJudgeTransport.complete(&req).unwrap()).unwrap();
        assert_eq!((s.accuracy, s.completeness, s.relevance), (10, 10, 10));
        let req = ChatRequest::new("m", &build_judge_prompt(&rec, ""));
        let s = parse_judge_reply(&MockJudgeTransport.complete(&req).unwrap()).unwrap();
        assert_eq!((s.accuracy, s.completeness, s.relevance), (1, 1, 1));
    }

    #[test]
    fn cache_key_depends_on_model_and_prompt() {
        let p = JudgePrompt { system: "s".into(), user: "u".into() };
        let q = JudgePrompt { system: "s".into(), user: "v".into() };
        assert_eq!(cache_key("a", &p), cache_key("a", &p));
        assert_ne!(cache_key("a", &p), cache_key("b", &p));
        assert_ne!(cache_key("a", &p), cache_key("a", &q));
        assert_eq!(cache_key("a", &p).len(), 64);
    }

    #[test]
    fn request_body_shape() {
        let p = JudgePrompt { system: "sys".into(), user: "usr".into() };
        let v = serde_json::to_value(ChatRequest::new("gpt", &p)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "model": "gpt",
                "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "usr"}],
                "temperature": 0.0
            })
        );
    }
}
