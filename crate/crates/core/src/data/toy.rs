//! Synthetic datasets for desk-scale experiments.
//!
//! Two instruction families with disjoint instructions and vocabularies
//! (numeric tasks vs. word tasks) stand in for an in-domain and an
//! out-of-domain instruction corpus, and a templated sentence generator
//! stands in for general web text. Every record renders to well under 64
//! tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{render_with_response, InstructionRecord, RawTextRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Arithmetic on small integers.
    Numeric,
    /// String manipulation of short English words.
    Words,
}

const WORDS: &[&str] = &[
    "cat", "dog", "stone", "apple", "river", "light", "green", "table", "house", "bird", "fish",
    "tree", "moon", "star", "rain", "cloud", "bread", "lamp", "road", "ship", "sand", "wolf",
    "milk", "door", "leaf", "snow", "king", "rose", "bell", "hill",
];

const ADJECTIVES: &[&str] = &["old", "small", "bright", "quiet", "red", "cold", "tall", "soft"];
const VERBS: &[&str] = &["sees", "finds", "likes", "holds", "moves", "follows", "hears", "paints"];

fn word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS[rng.random_range(0..WORDS.len())]
}

fn numeric(rng: &mut ChaCha8Rng) -> InstructionRecord {
    let a: u32 = rng.random_range(1..50);
    let b: u32 = rng.random_range(1..50);
    let (instruction, input, output) = match rng.random_range(0..4) {
        0 => ("Add the numbers.", format!("{a} {b}"), (a + b).to_string()),
        1 => {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            ("Subtract the numbers.", format!("{hi} {lo}"), (hi - lo).to_string())
        }
        2 => ("Double the number.", a.to_string(), (2 * a).to_string()),
        _ => ("Halve the number.", (2 * a).to_string(), a.to_string()),
    };
    InstructionRecord {
        instruction: instruction.into(),
        input,
        output,
    }
}

fn words(rng: &mut ChaCha8Rng) -> InstructionRecord {
    let w = word(rng);
    let (instruction, output) = match rng.random_range(0..4) {
        0 => ("Reverse the word.", w.chars().rev().collect()),
        1 => ("Uppercase the word.", w.to_uppercase()),
        2 => ("Say it twice.", format!("{w} {w}")),
        _ => ("First letter.", w[..1].to_string()),
    };
    InstructionRecord {
        instruction: instruction.into(),
        input: w.into(),
        output,
    }
}

pub fn instruction_records(family: Family, n: usize, seed: u64) -> Vec<InstructionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match family {
            Family::Numeric => numeric(&mut rng),
            Family::Words => words(&mut rng),
        })
        .collect()
}

pub fn raw_records(n: usize, seed: u64) -> Vec<RawTextRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let adj = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
            let verb = VERBS[rng.random_range(0..VERBS.len())];
            let a = word(&mut rng);
            let b = word(&mut rng);
            RawTextRecord {
                text: format!("The {adj} {a} {verb} the {b}."),
            }
        })
        .collect()
}

/// Training text of at least `min_bytes` bytes: numeric records, word records
/// and sentences in a 2:2:1 mix, separated by blank lines.
pub fn training_corpus(min_bytes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(min_bytes + 128);
    while out.len() < min_bytes {
        let doc = match rng.random_range(0..5) {
            0 | 1 => render_with_response(&numeric(&mut rng)),
            2 | 3 => render_with_response(&words(&mut rng)),
            _ => {
                let sub_seed = rng.random();
                raw_records(1, sub_seed).remove(0).text
            }
        };
        out.extend_from_slice(doc.as_bytes());
        out.extend_from_slice(b"\n\n");
    }
    out
}
