use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seqmodels::{BEGIN, END, PAD, UNK};

pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Frequency-truncated symbol table; ids 0–3 are pad, begin, end and unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(kept: Vec<String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Tokens for ids, stopping at the end token and skipping pad/begin.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != END)
            .filter(|&&i| i != PAD && i != BEGIN)
            .map(|&i| self.tokens.get(i).cloned().unwrap_or_else(|| RESERVED[UNK].to_string()))
            .collect()
    }
}

/// Keeps the `max_size - 4` most frequent tokens, ties broken lexicographically.
pub fn build_vocab(dataset: &Dataset, max_size: usize) -> Result<Vocab> {
    if max_size <= RESERVED.len() {
        return Err(Error::invalid(format!("vocabulary size must exceed {}, got {max_size}", RESERVED.len())));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &dataset.pairs {
        for t in p.source.iter().chain(&p.target) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let kept = ranked
        .into_iter()
        .take(max_size - RESERVED.len())
        .map(|(t, _)| t.to_string())
        .collect();
    Ok(Vocab::from_tokens(kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Pair;

    fn corpus(text: &[(&str, &str)]) -> Dataset {
        Dataset::train_only(text.iter().map(|(s, t)| Pair::new(s, t)).collect())
    }

    #[test]
    fn keeps_everything_when_room() {
        let d = corpus(&[("a a b", "a b c")]);
        let v = build_vocab(&d, 7).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("c"), 6);
    }

    #[test]
    fn drops_least_frequent() {
        let d = corpus(&[("a a b", "a b c")]);
        let v = build_vocab(&d, 6).unwrap();
        assert_eq!(v.id("c"), UNK);
        assert_eq!((v.id("a"), v.id("b")), (4, 5));
    }

    #[test]
    fn ties_break_lexicographically() {
        let d = corpus(&[("b a", "a b")]);
        let v = build_vocab(&d, 5).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn rejects_tiny_size_and_empty_data() {
        assert!(build_vocab(&corpus(&[("a", "b")]), 4).is_err());
        assert!(matches!(build_vocab(&Dataset::train_only(vec![]), 10), Err(Error::Empty(_))));
    }

    #[test]
    fn decode_inverts_encode_on_kept_tokens() {
        let d = corpus(&[("x y z", "y z w")]);
        let v = build_vocab(&d, 100).unwrap();
        let toks: Vec<String> = ["w", "x", "z"].iter().map(|s| s.to_string()).collect();
        assert_eq!(v.decode(&v.encode(&toks)), toks);
    }
}
