//! Diversity (Dist-n, Ent-n) and relevance (BLEU, ROUGE-L, embedding) metrics
//! over generated-response corpora. All scores are fractions, not percentages.

mod embedding;
mod overlap;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embedding::{embedding_metric, EmbeddingMode, EmbeddingTable};
pub use overlap::{bleu, rouge_l};
pub use report::{build_report, MetricKind, MetricsConfig, MetricsReport};

/// Corpus-level n-gram counts `F(w)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramTable {
    pub n: usize,
    pub counts: BTreeMap<Vec<String>, usize>,
    pub total: usize,
}

impl NGramTable {
    pub fn from_corpus(corpus: &[Vec<String>], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for sentence in corpus {
            for gram in sentence.windows(n) {
                *counts.entry(gram.to_vec()).or_insert(0) += 1;
                total += 1;
            }
        }
        Ok(NGramTable { n, counts, total })
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

fn nonempty_table(corpus: &[Vec<String>], n: usize) -> Result<NGramTable> {
    let table = NGramTable::from_corpus(corpus, n)?;
    if table.total == 0 {
        return Err(Error::Empty("n-gram table"));
    }
    Ok(table)
}

/// Distinct n-grams over total n-grams, counted over the whole corpus.
pub fn dist_n(corpus: &[Vec<String>], n: usize) -> Result<f64> {
    let t = nonempty_table(corpus, n)?;
    Ok(t.distinct() as f64 / t.total as f64)
}

/// Entropy (nats) of the corpus-level empirical n-gram distribution.
pub fn ent_n(corpus: &[Vec<String>], n: usize) -> Result<f64> {
    let t = nonempty_table(corpus, n)?;
    let total = t.total as f64;
    let mut terms: Vec<f64> = t
        .counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .collect();
    Ok(order_free_sum(&mut terms).max(0.0))
}

/// Sums after sorting so the result does not depend on input order.
pub(crate) fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn order_free_mean(mut values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    order_free_sum(&mut values) / n
}

#[cfg(test)]
pub(crate) fn sentences(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| crate::corpus::tokenize(l)).collect()
}
