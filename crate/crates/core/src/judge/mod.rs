//! LLM-as-judge scoring against a chat-completions endpoint.
//!
//! The judge rates a generated response against the ideal response on
//! accuracy, completeness and relevance (integers 1-10) and replies in a
//! fixed line-oriented format that [`parse_judge_reply`] reads back.

mod client;

pub use client::{
    ChatMessage, ChatRequest, ChatTransport, HttpTransport, Judge, JudgeCache, JudgeConfig, JudgeRequestRecord,
    MockJudgeTransport, API_KEY_ENV,
};

use serde::{Deserialize, Serialize};

use crate::data::InstructionRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub accuracy: u8,
    pub completeness: u8,
    pub relevance: u8,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub system: String,
    pub user: String,
}

pub const SYSTEM_PROMPT: &str = "You are a meticulous and unbiased evaluator of responses \
produced by AI language models. Judge only the quality of the generated response against the \
ideal response, ignoring its length and style, and rate it strictly.";

/// Renders the judge request for one sample. The byte layout is fixed.
pub fn build_judge_prompt(rec: &InstructionRecord, generated: &str) -> JudgePrompt {
    let input = if rec.input.is_empty() { "(none)" } else { rec.input.as_str() };
    let user = format!(
        "Evaluate the generated response to the instruction below.\n\
         \n\
         ### Instruction\n{instruction}\n\
         \n\
         ### Input\n{input}\n\
         \n\
         ### Ideal Response\n{ideal}\n\
         \n\
         ### Generated Response\n{generated}\n\
         \n\
         Rate the generated response on three criteria, each an integer from 1 (worst) to 10 (best):\n\
         - Accuracy: is the content correct with respect to the ideal response?\n\
         - Completeness: does it cover everything the ideal response covers?\n\
         - Relevance: does it address the instruction and input without digressing?\n\
         \n\
         Reply in exactly this format:\n\
         Accuracy: <n>\n\
         Completeness: <n>\n\
         Relevance: <n>\n\
         Feedback: <text>",
        instruction = rec.instruction,
        ideal = rec.output,
    );
    JudgePrompt {
        system: SYSTEM_PROMPT.to_string(),
        user,
    }
}

fn score_field(raw: &str, label: &'static str, field: &'static str) -> Result<u8> {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| {
            l.len() > label.len()
                && l.is_char_boundary(label.len())
                && l[..label.len()].eq_ignore_ascii_case(label)
                && l[label.len()..].trim_start().starts_with(':')
        })
        .ok_or(Error::MissingField(field))?;
    let value = line[label.len()..].trim_start()[1..].trim();
    let token = value.split_whitespace().next().unwrap_or("");
    let token = token.trim_end_matches(['.', ',', ';']);
    let token = token.split('/').next().unwrap_or(token);
    let n: i64 = token.parse().map_err(|_| Error::NonIntegerScore {
        field,
        raw: value.to_string(),
    })?;
    if !(1..=10).contains(&n) {
        return Err(Error::OutOfRangeScore { field, value: n });
    }
    Ok(n as u8)
}

/// Reads `Accuracy`, `Completeness` and `Relevance` (case-insensitive) and
/// takes everything after `Feedback:` as feedback.
pub fn parse_judge_reply(raw: &str) -> Result<JudgeScore> {
    let accuracy = score_field(raw, "accuracy", "accuracy")?;
    let completeness = score_field(raw, "completeness", "completeness")?;
    let relevance = score_field(raw, "relevance", "relevance")?;
    let lower = raw.to_ascii_lowercase();
    let feedback = lower
        .find("feedback:")
        .map(|i| raw[i + "feedback:".len()..].trim().to_string())
        .unwrap_or_default();
    Ok(JudgeScore {
        accuracy,
        completeness,
        relevance,
        feedback,
    })
}

/// Mean scores per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeAggregate {
    pub accuracy: f64,
    pub completeness: f64,
    pub relevance: f64,
    pub count: usize,
}

impl std::fmt::Display for JudgeAggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "accuracy {:.4}  completeness {:.4}  relevance {:.4}  (n={})",
            self.accuracy, self.completeness, self.relevance, self.count
        )
    }
}

pub fn aggregate_scores(scores: &[JudgeScore]) -> Result<JudgeAggregate> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&JudgeScore) -> u8| scores.iter().map(|s| f(s) as f64).sum::<f64>() / n;
    Ok(JudgeAggregate {
        accuracy: mean(|s| s.accuracy),
        completeness: mean(|s| s.completeness),
        relevance: mean(|s| s.relevance),
        count: scores.len(),
    })
}
