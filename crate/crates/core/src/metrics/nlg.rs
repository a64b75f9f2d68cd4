use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::text::split_tokens;

/// Lower-cased tokens of a report.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSequence(tokens.into_iter().filter(|t| !t.is_empty()).collect())
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence::new(iter.into_iter().map(|s| s.as_ref().to_string()).collect())
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    split_tokens(text).into_iter().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuConfig {
    /// Stand-in precision for an n-gram order with no clipped matches.
    pub epsilon: f64,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig { epsilon: 1e-9 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// BLEU with unigram and bigram precisions and the default smoothing.
pub fn bleu2(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    bleu2_with(candidate, reference, &BleuConfig::default())
}

/// Geometric mean of clipped unigram and bigram precision times the brevity
/// penalty. A one-token candidate has no bigrams and is scored on unigrams
/// alone. Orders with zero clipped matches use `cfg.epsilon` as precision.
pub fn bleu2_with(candidate: &TokenSequence, reference: &TokenSequence, cfg: &BleuConfig) -> f64 {
    let (cand, refr) = (candidate.as_slice(), reference.as_slice());
    if cand.is_empty() {
        return 0.0;
    }
    let max_order = cand.len().min(2);
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let ref_counts = ngram_counts(refr, n);
        let clipped: usize = ngram_counts(cand, n)
            .into_iter()
            .map(|(gram, c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let total = cand.len() + 1 - n;
        let p = if clipped == 0 { cfg.epsilon } else { clipped as f64 / total as f64 };
        log_sum += p.ln();
    }
    let bp = if cand.len() < refr.len() {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / max_order as f64).exp()
}

/// Per-token contextual embeddings of one text, produced by an external
/// encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        if let Some(first) = rows.first() {
            let dim = first.len();
            if dim == 0 {
                return Err(MetricError::Input("embedding rows must be non-empty".into()));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != dim {
                    return Err(MetricError::Input(format!(
                        "embedding row {i} has dimension {} (expected {dim})",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(MetricError::Input(format!("embedding row {i} is not finite")));
                }
            }
        }
        Ok(EmbeddingMatrix { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-matching F1 over token embeddings: each candidate row is matched to
/// its most similar reference row for precision, and vice versa for recall.
/// The score lies in [0, 1] when all cosines are non-negative.
pub fn bert_score(cand: &EmbeddingMatrix, reference: &EmbeddingMatrix) -> Result<f64, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::Input("embedding matrix is empty".into()));
    }
    if cand.dim() != reference.dim() {
        return Err(MetricError::Input(format!(
            "embedding dimensions differ: {} vs {}",
            cand.dim(),
            reference.dim()
        )));
    }
    let sims: Vec<Vec<f64>> = cand
        .rows()
        .iter()
        .map(|c| reference.rows().iter().map(|r| cosine(c, r)).collect())
        .collect();
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / sims.len() as f64;
    let recall = (0..reference.rows().len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.rows().len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seq(s: &str) -> TokenSequence {
        s.split_whitespace().collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Lungs are clear."), seq("lungs are clear ."));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("PA and lateral (views):"), seq("pa and lateral ( views ) :"));
    }

    #[test]
    fn bleu_examples() {
        let x = seq("the lungs are clear");
        assert_eq!(bleu2(&x, &x), 1.0);
        assert!(bleu2(&seq("a b c"), &seq("d e f")) <= 1e-4);
        assert_abs_diff_eq!(bleu2(&seq("the cat sat"), &seq("the cat ran")), (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_eq!(bleu2(&TokenSequence::default(), &x), 0.0);
        assert_eq!(bleu2(&seq("clear"), &seq("clear")), 1.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        // p1 = 1, p2 = 1, BP = exp(1 - 4/2)
        let v = bleu2(&seq("lungs clear"), &seq("lungs clear no effusion"));
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-12);
    }

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn bert_score_examples() {
        let a = m(&[&[1.0, 0.0], &[0.3, 0.7]]);
        assert_abs_diff_eq!(bert_score(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let b = m(&[&[0.0, 1.0, 0.0]]);
        let c = m(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(bert_score(&b, &c).unwrap(), 0.0);

        // cosines 0.8 and 0.2 against unit reference rows
        let cand = m(&[&[1.0, 0.0]]);
        let refr = m(&[&[0.8, 0.6], &[0.2, (1.0f64 - 0.04).sqrt()]]);
        let expected = 2.0 * 0.8 * 0.5 / 1.3;
        assert_abs_diff_eq!(bert_score(&cand, &refr).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.6154, epsilon = 1e-4);
    }

    #[test]
    fn bert_score_rejects_empty_and_bad_rows() {
        let empty = EmbeddingMatrix::new(vec![]).unwrap();
        assert!(bert_score(&empty, &m(&[&[1.0]])).is_err());
        assert!(EmbeddingMatrix::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(EmbeddingMatrix::new(vec![vec![f64::NAN]]).is_err());
    }
}
