use super::{Pair, Vocab};
use crate::error::{Error, Result};
use crate::seqmodels::{BEGIN, END, PAD};

/// Padded id arrays; masks are 1 on real tokens (including begin/end) and 0 on padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBatch {
    pub sources: Vec<Vec<usize>>,
    pub source_masks: Vec<Vec<u8>>,
    pub targets: Vec<Vec<usize>>,
    pub target_masks: Vec<Vec<u8>>,
    /// Number of sentences that were cut to fit.
    pub truncated: usize,
}

fn padded(mut ids: Vec<usize>, len: usize) -> (Vec<usize>, Vec<u8>) {
    let real = ids.len();
    ids.resize(len, PAD);
    let mask = (0..len).map(|i| u8::from(i < real)).collect();
    (ids, mask)
}

/// Sources are cut to `max_len` tokens; targets to `max_len - 2` content tokens
/// wrapped in begin/end.
pub fn encode_batch(pairs: &[Pair], vocab: &Vocab, max_len: usize) -> Result<EncodedBatch> {
    if max_len < 2 {
        return Err(Error::invalid(format!("max length must be at least 2, got {max_len}")));
    }
    let mut batch = EncodedBatch {
        sources: Vec::with_capacity(pairs.len()),
        source_masks: Vec::with_capacity(pairs.len()),
        targets: Vec::with_capacity(pairs.len()),
        target_masks: Vec::with_capacity(pairs.len()),
        truncated: 0,
    };
    for p in pairs {
        let mut src = vocab.encode(&p.source);
        if src.len() > max_len {
            src.truncate(max_len);
            batch.truncated += 1;
        }
        let mut content = vocab.encode(&p.target);
        if content.len() > max_len - 2 {
            content.truncate(max_len - 2);
            batch.truncated += 1;
        }
        let mut tgt = Vec::with_capacity(max_len);
        tgt.push(BEGIN);
        tgt.extend(content);
        tgt.push(END);
        let (s, sm) = padded(src, max_len);
        let (t, tm) = padded(tgt, max_len);
        batch.sources.push(s);
        batch.source_masks.push(sm);
        batch.targets.push(t);
        batch.target_masks.push(tm);
    }
    Ok(batch)
}
