//! Token-level ROUGE-L with a verbosity penalty for open-ended answers.

use crate::error::{Error, Result};

/// Lowercased word tokens. Only [`tokenize`] builds one, so tokens are
/// never empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }
}

/// Lowercases and splits on every non-alphanumeric character. Punctuation
/// and whitespace are dropped.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect(),
    )
}

pub fn lcs_length(a: &TokenSeq, b: &TokenSeq) -> usize {
    lcs_len(a.tokens(), b.tokens())
}

/// Two-row dynamic programme, O(|a|·|b|) time and O(min) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Balanced ROUGE-L F-measure.
pub fn rouge_l_f(pred: &TokenSeq, reference: &TokenSeq) -> f64 {
    let lcs = lcs_length(pred, reference) as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { lcs / n as f64 };
    let p = ratio(pred.len());
    let r = ratio(reference.len());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `min(1, ref_len / pred_len)`: only answers longer than the reference
/// are penalised.
pub fn length_penalty(pred_len: usize, ref_len: usize) -> Result<f64> {
    if ref_len == 0 {
        return Err(Error::invalid("length penalty needs a non-empty reference"));
    }
    Ok(if pred_len <= ref_len {
        1.0
    } else {
        ref_len as f64 / pred_len as f64
    })
}

pub fn open_ended_reward(pred: &str, reference: &str) -> f64 {
    let pred = tokenize(pred);
    let reference = tokenize(reference);
    match length_penalty(pred.len(), reference.len()) {
        Ok(penalty) => rouge_l_f(&pred, &reference) * penalty,
        Err(_) => 0.0,
    }
}
