use std::collections::HashMap;

/// Lowercases, strips ASCII punctuation, drops the articles a/an/the and
/// collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, reference: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(reference) {
        1.0
    } else {
        0.0
    }
}

fn overlap_f1(pred: &[&str], reference: &[&str]) -> f64 {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Multiset token overlap F1 after [`normalize_answer`].
pub fn token_f1(pred: &str, reference: &str) -> f64 {
    let p = normalize_answer(pred);
    let r = normalize_answer(reference);
    overlap_f1(
        &p.split_whitespace().collect::<Vec<_>>(),
        &r.split_whitespace().collect::<Vec<_>>(),
    )
}

/// Clipped unigram overlap F1 on lowercased whitespace tokens; articles and
/// punctuation are kept.
pub fn rouge1_f1(pred: &str, reference: &str) -> f64 {
    let p = pred.to_lowercase();
    let r = reference.to_lowercase();
    overlap_f1(
        &p.split_whitespace().collect::<Vec<_>>(),
        &r.split_whitespace().collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  cat!"), "cat");
        assert_eq!(normalize_answer("A dog"), "dog");
        assert_eq!(normalize_answer("  An apple, the pear. "), "apple pear");
    }

    #[test]
    fn em_examples() {
        assert_eq!(exact_match("Paris", "paris."), 1.0);
        assert_eq!(exact_match("Paris, France", "Paris"), 0.0);
        assert_eq!(exact_match("", ""), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("the cat sat", "the cat slept"), 0.5);
        assert_eq!(token_f1("same words here", "same words here"), 1.0);
        assert_eq!(token_f1("alpha beta", "gamma delta"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "x"), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge1_f1("a cat", "a cat"), 1.0);
        assert!((rouge1_f1("the cat sat", "the cat slept") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge1_f1("sat cat the", "the cat sat"), 1.0);
        assert_eq!(rouge1_f1("x", ""), 0.0);
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn scores_in_unit_interval(a in "[a-d ]{0,20}", b in "[a-d ]{0,20}") {
            for v in [token_f1(&a, &b), rouge1_f1(&a, &b), exact_match(&a, &b)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if exact_match(&a, &b) == 1.0 {
                prop_assert_eq!(token_f1(&a, &b), 1.0);
            }
            prop_assert!((token_f1(&a, &b) - token_f1(&b, &a)).abs() < 1e-12);
        }
    }
}
