use serde::{Deserialize, Serialize};

use super::{bleu, dist_n, embedding_metric, ent_n, rouge_l, EmbeddingMode, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bleu,
    RougeL,
    Greedy,
    Average,
    Extreme,
    Dist1,
    Dist2,
    Ent4,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Bleu,
        MetricKind::RougeL,
        MetricKind::Greedy,
        MetricKind::Average,
        MetricKind::Extreme,
        MetricKind::Dist1,
        MetricKind::Dist2,
        MetricKind::Ent4,
    ];

    pub fn needs_embeddings(self) -> bool {
        matches!(self, MetricKind::Greedy | MetricKind::Average | MetricKind::Extreme)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub metrics: Vec<MetricKind>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            metrics: MetricKind::ALL.to_vec(),
        }
    }
}

impl MetricsConfig {
    pub fn without_embeddings(&self) -> Self {
        MetricsConfig {
            metrics: self.metrics.iter().copied().filter(|m| !m.needs_embeddings()).collect(),
        }
    }

    fn has(&self, m: MetricKind) -> bool {
        self.metrics.contains(&m)
    }
}

/// One evaluation run. Unselected metrics are `None`; every score is a fraction
/// (BLEU and ROUGE-L in [0, 1], not percentages). Ent-4 is in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
    pub greedy: Option<f64>,
    pub average: Option<f64>,
    pub extreme: Option<f64>,
    pub dist_1: Option<f64>,
    pub dist_2: Option<f64>,
    pub ent_4: Option<f64>,
    /// Fraction of generations that are source-specific responses (synthetic tasks only).
    pub source_specificity: Option<f64>,
    pub hypotheses: usize,
    pub hypothesis_tokens: usize,
    pub reference_tokens: usize,
    pub scale: String,
    pub config: MetricsConfig,
    pub config_hash: Option<String>,
}

/// Diversity metrics of an empty-ish corpus (no n-grams of the order) are
/// reported as 0 rather than failing the whole report.
fn diversity(f: impl Fn() -> Result<f64>) -> Result<f64> {
    match f() {
        Err(Error::Empty(_)) => Ok(0.0),
        other => other,
    }
}

pub fn build_report(
    generations: &[Vec<String>],
    references: &[Vec<String>],
    config: &MetricsConfig,
    table: Option<&EmbeddingTable>,
) -> Result<MetricsReport> {
    if generations.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} generations but {} references",
            generations.len(),
            references.len()
        )));
    }
    let needs_table = config.metrics.iter().any(|m| m.needs_embeddings());
    let table = match (needs_table, table) {
        (true, None) => return Err(Error::invalid("embedding metrics selected but no embedding table given")),
        (_, t) => t,
    };
    let emb = |mode| embedding_metric(mode, generations, references, table.expect("checked above"));
    let pick = |m: MetricKind, f: &dyn Fn() -> Result<f64>| -> Result<Option<f64>> {
        if config.has(m) {
            f().map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(MetricsReport {
        bleu: pick(MetricKind::Bleu, &|| bleu(generations, references))?,
        rouge_l: pick(MetricKind::RougeL, &|| rouge_l(generations, references))?,
        greedy: pick(MetricKind::Greedy, &|| emb(EmbeddingMode::Greedy))?,
        average: pick(MetricKind::Average, &|| emb(EmbeddingMode::Average))?,
        extreme: pick(MetricKind::Extreme, &|| emb(EmbeddingMode::Extreme))?,
        dist_1: pick(MetricKind::Dist1, &|| diversity(|| dist_n(generations, 1)))?,
        dist_2: pick(MetricKind::Dist2, &|| diversity(|| dist_n(generations, 2)))?,
        ent_4: pick(MetricKind::Ent4, &|| diversity(|| ent_n(generations, 4)))?,
        source_specificity: None,
        hypotheses: generations.len(),
        hypothesis_tokens: generations.iter().map(Vec::len).sum(),
        reference_tokens: references.iter().map(Vec::len).sum(),
        scale: "fraction".into(),
        config: config.clone(),
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::metrics::sentences;

    #[test]
    fn empty_selection_reports_counts_only() {
        let s = sentences(&["a b"]);
        let r = build_report(&s, &s, &MetricsConfig { metrics: vec![] }, None).unwrap();
        assert_eq!(r.bleu, None);
        assert_eq!(r.ent_4, None);
        assert_eq!((r.hypotheses, r.hypothesis_tokens), (1, 2));
    }

    #[test]
    fn single_identical_pair() {
        let s = sentences(&["a b a"]);
        let t = EmbeddingTable::parse("a 1 0\nb 0.5 2\n", "t").unwrap();
        let r = build_report(&s, &s, &MetricsConfig::default(), Some(&t)).unwrap();
        for v in [r.bleu, r.rouge_l, r.greedy, r.average, r.extreme] {
            assert_abs_diff_eq!(v.unwrap(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.dist_1.unwrap(), 2.0 / 3.0);
        assert_eq!(r.ent_4, Some(0.0));
    }

    #[test]
    fn missing_table_is_an_error() {
        let s = sentences(&["a"]);
        assert!(build_report(&s, &s, &MetricsConfig::default(), None).is_err());
        assert!(build_report(&s, &s, &MetricsConfig::default().without_embeddings(), None).is_ok());
    }

    #[test]
    fn round_trips_through_json() {
        let s = sentences(&["a b c d e", "a c"]);
        let r = sentences(&["a b", "c d e"]);
        let rep = build_report(&s, &r, &MetricsConfig::default().without_embeddings(), None).unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&text).unwrap(), rep);
    }
}
