//! Dataset ingestion (JSONL), seeded sampling and prompt rendering.

mod jsonl;
pub mod toy;

pub use jsonl::{load_jsonl, write_jsonl};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode_prompt, tokenize, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Raw,
    #[default]
    Instruction,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(DataFormat::Raw),
            "instruction" => Ok(DataFormat::Instruction),
            other => Err(Error::Config(format!("unknown data format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTextRecord {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Instruction(InstructionRecord),
    Raw(RawTextRecord),
}

impl Record {
    /// Text used for calibration and for loss/divergence evaluation.
    pub fn full_text(&self) -> String {
        match self {
            Record::Raw(r) => r.text.clone(),
            Record::Instruction(r) => render_with_response(r),
        }
    }

    pub fn as_instruction(&self) -> Option<&InstructionRecord> {
        match self {
            Record::Instruction(r) => Some(r),
            Record::Raw(_) => None,
        }
    }
}

/// `"Instruction: {instruction}\nInput: {input}\nResponse:"`; the `Input`
/// line is omitted when the input is empty.
pub fn render_instruction_prompt(rec: &InstructionRecord) -> String {
    if rec.input.is_empty() {
        format!("Instruction: {}\nResponse:", rec.instruction)
    } else {
        format!("Instruction: {}\nInput: {}\nResponse:", rec.instruction, rec.input)
    }
}

/// Prompt followed by a space and the reference output.
pub fn render_with_response(rec: &InstructionRecord) -> String {
    format!("{} {}", render_instruction_prompt(rec), rec.output)
}

/// Token sequence of a record for loss/divergence evaluation.
pub fn record_tokens(rec: &Record, max_len: usize) -> TokenSeq {
    tokenize(rec.full_text().as_bytes()).truncated(max_len)
}

/// Generation prompt (`BOS ++ prompt bytes`) that leaves room for `max_new`
/// tokens; overly long prompts keep BOS and their last bytes.
pub fn prompt_tokens(rec: &InstructionRecord, max_len: usize, max_new: usize) -> TokenSeq {
    let mut seq = encode_prompt(render_instruction_prompt(rec).as_bytes());
    let budget = max_len.saturating_sub(max_new).max(1);
    if seq.len() > budget {
        let tail = seq.0.len() - (budget - 1);
        let mut ids = vec![seq.0[0]];
        ids.extend_from_slice(&seq.0[tail..]);
        seq = TokenSeq(ids);
    }
    seq
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub sequences: Vec<TokenSeq>,
    pub source_name: String,
    pub seed: u64,
    pub sample_count: usize,
}

/// Seeded draw of `n` distinct indices from `0..len`, in draw order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::NotEnoughRecords {
            requested: n,
            available: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    let (picked, _) = idx.partial_shuffle(&mut rng, n);
    Ok(picked.to_vec())
}

/// Samples `n` records without replacement and tokenizes them, truncating
/// each to `max_len` tokens. Instruction records contribute prompt plus
/// reference output.
pub fn sample_calibration(
    records: &[Record],
    n: usize,
    seed: u64,
    max_len: usize,
    source_name: &str,
) -> Result<CalibrationSet> {
    let idx = sample_indices(records.len(), n, seed)?;
    let sequences = idx.iter().map(|&i| record_tokens(&records[i], max_len)).collect();
    Ok(CalibrationSet {
        sequences,
        source_name: source_name.to_string(),
        seed,
        sample_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn instr(i: &str, x: &str, o: &str) -> InstructionRecord {
        InstructionRecord {
            instruction: i.into(),
            input: x.into(),
            output: o.into(),
        }
    }

    #[test]
    fn prompt_layout() {
        assert_eq!(
            render_instruction_prompt(&instr("Add", "2 2", "4")),
            "Instruction: Add\nInput: 2 2\nResponse:"
        );
        assert_eq!(render_instruction_prompt(&instr("Say hi", "", "hi")), "Instruction: Say hi\nResponse:");
        assert_eq!(render_with_response(&instr("Add", "2 2", "4")), "Instruction: Add\nInput: 2 2\nResponse: 4");
    }

    #[test]
    fn rendering_is_injective_on_fuzzed_pairs() {
        let words = ["a", "b", "ab", "Input: x", "", " ", "Response:", "c d"];
        let mut seen = HashSet::new();
        let mut count = 0;
        for i in &words[..] {
            if i.is_empty() {
                continue;
            }
            for x in &words[..] {
                count += 1;
                seen.insert(render_instruction_prompt(&instr(i, x, "o")));
            }
        }
        assert_eq!(seen.len(), count);
    }

    fn records(n: usize) -> Vec<Record> {
        (0..n).map(|i| Record::Raw(RawTextRecord { text: format!("record {i}") })).collect()
    }

    #[test]
    fn full_draw_returns_every_record() {
        let recs = records(10);
        let set = sample_calibration(&recs, 10, 3, 64, "raw").unwrap();
        let got: HashSet<_> = set.sequences.iter().cloned().collect();
        assert_eq!(got.len(), 10);
        assert_eq!(set.sample_count, 10);
    }

    #[test]
    fn sampling_is_seeded() {
        let recs = records(1000);
        let a = sample_calibration(&recs, 128, 1, 64, "x").unwrap();
        let b = sample_calibration(&recs, 128, 1, 64, "x").unwrap();
        assert_eq!(a, b);
        let ia: HashSet<_> = sample_indices(1000, 128, 1).unwrap().into_iter().collect();
        let ib: HashSet<_> = sample_indices(1000, 128, 2).unwrap().into_iter().collect();
        assert_ne!(ia, ib);
        assert!(ia.intersection(&ib).count() < 128);
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut hits = [0usize; 10];
        for seed in 0..200 {
            hits[sample_indices(10, 1, seed).unwrap()[0]] += 1;
        }
        assert!(hits.iter().all(|&h| (5..=40).contains(&h)), "{hits:?}");
    }

    #[test]
    fn not_enough_records() {
        assert!(matches!(
            sample_calibration(&records(3), 4, 0, 8, "x"),
            Err(Error::NotEnoughRecords { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn truncation_and_prompt_budget() {
        let rec = Record::Raw(RawTextRecord { text: "x".repeat(100) });
        assert_eq!(record_tokens(&rec, 16).len(), 16);
        let long = instr(&"y".repeat(100), "", "z");
        let p = prompt_tokens(&long, 64, 16);
        assert_eq!(p.len(), 48);
        assert_eq!(p.0[0], crate::model::BOS);
        assert_eq!(*p.0.last().unwrap(), b':' as u32);
    }
}
