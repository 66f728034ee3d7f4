use serde::{Deserialize, Serialize};

use super::eval::par_map;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::metrics::bleu;
use crate::objectives::{strip_end, with_end, Example};
use crate::seqmodels::{rank_order, Generator};

/// A beam candidate with both direction scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Content ids (no end token).
    pub tokens: Vec<usize>,
    /// `log p(T | S)` including the end token when the beam emitted it.
    pub forward: f64,
    /// `log q(S | T)`.
    pub backward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reranked {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub forward: f64,
    pub backward: f64,
    /// Position of the winner in the beam's own ordering.
    pub beam_rank: usize,
}

/// Beam candidates for `source`, best forward score first.
pub fn candidates(forward: &Generator, backward: &Generator, source: &[usize], width: usize) -> Result<Vec<Candidate>> {
    let end = forward.dims.end_id;
    let beam = forward.beam_search(source, width)?;
    if beam.is_empty() {
        return Err(Error::Empty("beam"));
    }
    let target = with_end(source, backward.dims.end_id);
    beam.into_iter()
        .map(|h| {
            let tokens = strip_end(&h.tokens, end);
            let bwd = backward.seq_logprob(&tokens, &target, None)?;
            Ok(Candidate {
                tokens,
                forward: h.logprob,
                backward: bwd,
            })
        })
        .collect()
}

/// Highest `(1 − w)·forward + w·backward`; ties go to the shorter, then
/// lexicographically smaller candidate.
pub fn pick(cands: &[Candidate], w: f64) -> Result<Reranked> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("MMI weight must lie in [0, 1], got {w}")));
    }
    let score = |c: &Candidate| (1.0 - w) * c.forward + w * c.backward;
    let (rank, best) = cands
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| rank_order(score(a), &a.tokens, score(b), &b.tokens))
        .ok_or(Error::Empty("beam"))?;
    Ok(Reranked {
        tokens: best.tokens.clone(),
        score: score(best),
        forward: best.forward,
        backward: best.backward,
        beam_rank: rank,
    })
}

pub fn mmi_bidi_rerank(forward: &Generator, backward: &Generator, source: &[usize], width: usize, w: f64) -> Result<Reranked> {
    pick(&candidates(forward, backward, source, width)?, w)
}

pub fn rerank_corpus(forward: &Generator, backward: &Generator, sources: &[Vec<usize>], width: usize, w: f64) -> Result<Vec<Reranked>> {
    par_map(sources, |_, s| mmi_bidi_rerank(forward, backward, s, width, w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSelection {
    pub weight: f64,
    /// `(w, validation BLEU)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Grid search of the MMI weight by validation BLEU; ties go to the smaller weight.
pub fn select_mmi_weight(
    forward: &Generator,
    backward: &Generator,
    valid: &[Example],
    vocab: &Vocab,
    width: usize,
    grid: &[f64],
) -> Result<WeightSelection> {
    if valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("MMI weight grid"));
    }
    let cands = par_map(valid, |_, ex| candidates(forward, backward, &ex.source, width))?;
    let refs: Vec<Vec<String>> = valid.iter().map(|e| vocab.decode(&e.target)).collect();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &w in grid {
        let hyps = cands
            .iter()
            .map(|c| pick(c, w).map(|r| vocab.decode(&r.tokens)))
            .collect::<Result<Vec<_>>>()?;
        let b = bleu(&hyps, &refs)?;
        scores.push((w, b));
        let better = match best {
            None => true,
            Some((bw, bb)) => b > bb || (b == bb && w < bw),
        };
        if better {
            best = Some((w, b));
        }
    }
    Ok(WeightSelection {
        weight: best.expect("non-empty grid").0,
        scores,
    })
}
