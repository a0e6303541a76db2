//! Corpus BLEU-4 with 13a-style tokenization and exponential smoothing.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Log used for zero precisions, so that the score collapses to zero.
const LOG_ZERO: f64 = -9_999_999_999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub bleu: f64,
    /// Percent precisions for orders 1 to 4, after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap());
static PERIOD_COMMA_AFTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([^0-9])([\.,])").unwrap());
static PERIOD_COMMA_BEFORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([\.,])([^0-9])").unwrap());
static DIGIT_DASH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([0-9])(-)").unwrap());

/// Simplified 13a tokenizer: unescapes the common entities, splits off
/// punctuation, keeps separators inside numbers, collapses whitespace.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let s = PUNCT.replace_all(&s, " $1 ");
    let s = PERIOD_COMMA_AFTER.replace_all(&s, "$1 $2 ");
    let s = PERIOD_COMMA_BEFORE.replace_all(&s, " $1 $2");
    let s = DIGIT_DASH.replace_all(&s, "$1 $2 ");
    s.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU over pre-tokenized sentences, one reference each.
pub fn corpus_bleu_tokens<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<QualityReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::argument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
            let ref_counts = ngram_counts(reference, n);
            matches[n - 1] += ngram_counts(hyp, n)
                .into_iter()
                .map(|(gram, c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    Ok(score(matches, totals, hyp_len, ref_len))
}

/// Corpus BLEU over raw text, tokenized with [`tokenize_13a`].
pub fn corpus_bleu(hypotheses: &[&str], references: &[&str]) -> Result<QualityReport> {
    let hyps: Vec<Vec<String>> = hypotheses.iter().map(|h| tokenize_13a(h)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize_13a(r)).collect();
    corpus_bleu_tokens(&hyps, &refs)
}

/// Turns corpus statistics into a score.
pub fn score(matches: [usize; MAX_ORDER], totals: [usize; MAX_ORDER], hyp_len: usize, ref_len: usize) -> QualityReport {
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut precisions = [0.0; MAX_ORDER];
    let mut report = QualityReport {
        bleu: 0.0,
        precisions,
        brevity_penalty,
        matches,
        totals,
        hyp_len,
        ref_len,
    };
    if matches.iter().all(|&m| m == 0) {
        return report;
    }
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            break;
        }
        precisions[n] = if matches[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * totals[n] as f64)
        } else {
            100.0 * matches[n] as f64 / totals[n] as f64
        };
    }
    let log_sum: f64 = precisions
        .iter()
        .map(|&p| if p == 0.0 { LOG_ZERO } else { p.ln() })
        .sum();
    report.precisions = precisions;
    report.bleu = brevity_penalty * (log_sum / MAX_ORDER as f64).exp();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation_but_not_numbers() {
        assert_eq!(tokenize_13a("Hello, world!"), ["Hello", ",", "world", "!"]);
        assert_eq!(tokenize_13a("It costs 3.50 (approx)."), ["It", "costs", "3.50", "(", "approx", ")", "."]);
        assert_eq!(tokenize_13a("1,000 items"), ["1,000", "items"]);
        assert_eq!(tokenize_13a("10-20 a-b"), ["10", "-", "20", "a-b"]);
        assert_eq!(tokenize_13a("&quot;hi&quot;  \n"), ["\"", "hi", "\""]);
    }

    #[test]
    fn identity_scores_100() {
        let r = corpus_bleu(&["the cat sat on the mat ."], &["the cat sat on the mat ."]).unwrap();
        assert!((r.bleu - 100.0).abs() < 1e-12);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn disjoint_scores_zero() {
        let r = corpus_bleu(&["a b c d"], &["w x y z"]).unwrap();
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn smoothing_and_brevity() {
        // 4 tokens, unigrams and bigrams partly match, no 3- or 4-gram matches.
        let r = corpus_bleu_tokens(&[vec![1, 2, 9, 3]], &[vec![1, 2, 3, 4, 5]]).unwrap();
        assert_eq!(r.matches, [3, 1, 0, 0]);
        assert_eq!(r.totals, [4, 3, 2, 1]);
        let expected_p = [75.0, 100.0 / 3.0, 100.0 / 4.0, 100.0 / 4.0];
        for (a, b) in r.precisions.iter().zip(expected_p) {
            assert!((a - b).abs() < 1e-12);
        }
        let bp = (1.0 - 5.0f64 / 4.0).exp();
        let expected = bp * (expected_p.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp();
        assert!((r.bleu - expected).abs() < 1e-9);
    }

    #[test]
    fn too_short_hypotheses_score_zero() {
        let r = corpus_bleu_tokens(&[vec![1, 2]], &[vec![1, 2]]).unwrap();
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(corpus_bleu(&["a"], &[]), Err(Error::Argument(_))));
    }
}
