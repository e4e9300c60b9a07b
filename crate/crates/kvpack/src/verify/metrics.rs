//! Answer metrics: substring exact match, token-overlap F1, and the
//! distinct-4-gram degeneracy score.

use std::collections::HashMap;

use crate::model::TokenId;

/// Normalization shared by [`exact_match`] and [`token_f1`]: lowercase,
/// collapse whitespace runs to single spaces, strip punctuation surrounding
/// each word (internal punctuation stays).
pub fn normalize_answer(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Substring containment of the normalized gold answer in the normalized
/// prediction. Deliberately loose: "parisian" matches gold "Paris".
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction).contains(&normalize_answer(gold))
}

fn token_counts(s: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for tok in normalize_answer(s).split_whitespace() {
        *counts.entry(tok.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Harmonic mean of token multiset precision and recall after
/// normalization. Both sides empty scores 1; exactly one side empty scores 0.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = token_counts(prediction);
    let g = token_counts(gold);
    let np: usize = p.values().sum();
    let ng: usize = g.values().sum();
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let overlap: usize = p
        .iter()
        .map(|(tok, &c)| c.min(g.get(tok).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / np as f64;
    let recall = overlap as f64 / ng as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Distinct 4-grams over total 4-grams. Repetitive output scores low;
/// sequences shorter than 4 tokens score 1.
pub fn degeneracy_score(tokens: &[TokenId]) -> f64 {
    if tokens.len() < 4 {
        return 1.0;
    }
    let total = tokens.len() - 3;
    let distinct = tokens
        .windows(4)
        .collect::<std::collections::HashSet<_>>()
        .len();
    distinct as f64 / total as f64
}
