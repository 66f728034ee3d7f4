use std::collections::HashMap;

use super::order_free_mean;
use crate::error::{Error, Result};

fn check_pairs(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    Ok(())
}

fn gram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU-4: clipped n-gram precisions pooled over the corpus, unsmoothed at
/// order 1, add-one smoothed at orders 2–4, times the brevity penalty.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = gram_counts(r, n);
            for (g, c) in gram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok((bp * (log_p / 4.0).exp()).clamp(0.0, 1.0))
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Mean per-pair ROUGE-L F1.
pub fn rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let scores = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| {
            let l = lcs(h, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (p, rec) = (l / h.len() as f64, l / r.len() as f64);
            2.0 * p * rec / (p + rec)
        })
        .collect();
    Ok(order_free_mean(scores))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::metrics::sentences;

    #[test]
    fn bleu_extremes() {
        let a = sentences(&["the cat sat on the mat"]);
        assert_abs_diff_eq!(bleu(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(bleu(&sentences(&["x y"]), &sentences(&["a b"])).unwrap(), 0.0);
        assert!(bleu(&[], &[]).is_err());
        assert!(bleu(&a, &[]).is_err());
    }

    /// Independent computation: all clipped precisions are 3/3, 2/2, 1/1 and the
    /// smoothed (0+1)/(0+1) at order 4, so only the brevity penalty e^{1-4/3} remains.
    #[test]
    fn bleu_short_hypothesis() {
        let v = bleu(&sentences(&["the cat sat"]), &sentences(&["the cat sat down"])).unwrap();
        assert_abs_diff_eq!(v, (1.0f64 - 4.0 / 3.0).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.716531, epsilon = 1e-6);
    }

    #[test]
    fn rouge_examples() {
        let a = sentences(&["a b c"]);
        assert_abs_diff_eq!(rouge_l(&a, &a).unwrap(), 1.0);
        assert_eq!(rouge_l(&sentences(&["x"]), &sentences(&["y"])).unwrap(), 0.0);
        let v = rouge_l(&sentences(&["the cat"]), &sentences(&["the cat sat"])).unwrap();
        assert_abs_diff_eq!(v, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn lcs_is_not_substring() {
        assert_eq!(lcs(&sentences(&["a x b y c"])[0], &sentences(&["a b c"])[0]), 3);
    }
}
