use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::order_free_mean;
use crate::error::{Error, Result};

/// Word vectors of one fixed dimension. Words missing from the table are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    Greedy,
    Average,
    Extreme,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape("embedding table", format!("vector of length {} in a {}-d table", v.len(), self.dim)));
        }
        self.vectors.insert(word.into(), v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Parses `word v1 … vd` lines. A first line of exactly two integers is taken
    /// as a `count dim` header.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.into(),
            line,
            message,
        };
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                let dim: usize = fields[1].parse().expect("checked");
                if dim == 0 {
                    return Err(err(1, "header declares dimension 0".into()));
                }
                table = Some(EmbeddingTable::new(dim));
                continue;
            }
            if fields.len() < 2 {
                return Err(err(i + 1, "expected a word followed by its vector".into()));
            }
            let v = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err(i + 1, "non-numeric vector component".into()))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len()));
            if v.len() != t.dim {
                return Err(err(i + 1, format!("vector has {} components, expected {}", v.len(), t.dim)));
            }
            t.vectors.insert(fields[0].to_lowercase(), v);
        }
        match table {
            Some(t) if !t.is_empty() => Ok(t),
            _ => Err(Error::Empty("embedding table")),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    fn lookup<'a>(&'a self, sentence: &[String], which: usize) -> Result<Vec<&'a [f64]>> {
        let vs: Vec<&[f64]> = sentence.iter().filter_map(|w| self.get(w)).collect();
        if vs.is_empty() {
            return Err(Error::invalid(format!("sentence {which} has no words in the embedding table")));
        }
        Ok(vs)
    }
}

/// Cosine similarity; 0 when either vector is zero.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn mean_vector(vs: &[&[f64]]) -> Vec<f64> {
    let d = vs[0].len();
    (0..d).map(|k| vs.iter().map(|v| v[k]).sum::<f64>() / vs.len() as f64).collect()
}

/// Per dimension, the component of largest magnitude (first one on ties).
fn extreme_vector(vs: &[&[f64]]) -> Vec<f64> {
    let d = vs[0].len();
    (0..d)
        .map(|k| vs.iter().map(|v| v[k]).fold(0.0, |best: f64, x| if x.abs() > best.abs() { x } else { best }))
        .collect()
}

fn greedy_direction(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / from.len() as f64
}

/// Mean over pairs of the chosen sentence-level embedding similarity.
pub fn embedding_metric(mode: EmbeddingMode, hyps: &[Vec<String>], refs: &[Vec<String>], table: &EmbeddingTable) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut scores = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let hv = table.lookup(h, i)?;
        let rv = table.lookup(r, i)?;
        scores.push(match mode {
            EmbeddingMode::Greedy => 0.5 * (greedy_direction(&hv, &rv) + greedy_direction(&rv, &hv)),
            EmbeddingMode::Average => cosine(&mean_vector(&hv), &mean_vector(&rv)),
            EmbeddingMode::Extreme => cosine(&extreme_vector(&hv), &extreme_vector(&rv)),
        });
    }
    Ok(order_free_mean(scores))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::metrics::sentences;

    const MODES: [EmbeddingMode; 3] = [EmbeddingMode::Greedy, EmbeddingMode::Average, EmbeddingMode::Extreme];

    fn table() -> EmbeddingTable {
        EmbeddingTable::parse("4 2\na 1 0\nb 0 1\nc 1 1\nd -2 0.5\n", "t").unwrap()
    }

    #[test]
    fn header_is_optional() {
        let t = EmbeddingTable::parse("a 1 0 0\nb 0 1 0\n", "t").unwrap();
        assert_eq!((t.dim(), t.len()), (3, 2));
        assert_eq!(table().dim(), 2);
        let err = EmbeddingTable::parse("a 1 0\nb 0 1 2\n", "emb.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(EmbeddingTable::parse("a 1 x\n", "t").is_err());
    }

    #[test]
    fn identical_and_orthogonal() {
        let t = table();
        let s = sentences(&["a c"]);
        for m in MODES {
            assert_abs_diff_eq!(embedding_metric(m, &s, &s, &t).unwrap(), 1.0, epsilon = 1e-12);
            let v = embedding_metric(m, &sentences(&["a"]), &sentences(&["b"]), &t).unwrap();
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    /// hyp "a b" = {(1,0), (0,1)}, ref "c d" = {(1,1), (-2,0.5)}.
    #[test]
    fn hand_computed_two_word_sentences() {
        let t = table();
        let h = sentences(&["a b"]);
        let r = sentences(&["c d"]);
        let s2 = 0.5f64.sqrt();
        let nd = (4.25f64).sqrt();
        // Greedy: a→max(cos(a,c)=1/√2, cos(a,d)=-2/√4.25); b→max(1/√2, 0.5/√4.25).
        let h_to_r = (s2 + s2) / 2.0;
        // c→max(1/√2, 1/√2); d→max(-2/√4.25, 0.5/√4.25).
        let r_to_h = (s2 + 0.5 / nd) / 2.0;
        let greedy = embedding_metric(EmbeddingMode::Greedy, &h, &r, &t).unwrap();
        assert_abs_diff_eq!(greedy, 0.5 * (h_to_r + r_to_h), epsilon = 1e-12);
        // Average: means (0.5,0.5) and (-0.5,0.75).
        let avg = embedding_metric(EmbeddingMode::Average, &h, &r, &t).unwrap();
        let (u, w) = ([0.5, 0.5], [-0.5, 0.75]);
        let expect = (u[0] * w[0] + u[1] * w[1]) / ((0.5f64).sqrt() * (0.25f64 + 0.5625).sqrt());
        assert_abs_diff_eq!(avg, expect, epsilon = 1e-12);
        // Extreme: (1,1) for hyp, (-2,1) for ref.
        let ext = embedding_metric(EmbeddingMode::Extreme, &h, &r, &t).unwrap();
        assert_abs_diff_eq!(ext, (-2.0 + 1.0) / (2f64.sqrt() * 5f64.sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn unknown_words_are_skipped_but_not_all() {
        let t = table();
        let v = embedding_metric(EmbeddingMode::Average, &sentences(&["a zzz"]), &sentences(&["a"]), &t).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        assert!(embedding_metric(EmbeddingMode::Average, &sentences(&["zzz"]), &sentences(&["a"]), &t).is_err());
    }
}
