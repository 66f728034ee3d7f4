use rand::Rng;

use super::ModelDims;
use crate::autodiff::{conv_out_len, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};

/// A token sequence as hard ids or as soft one-hot rows (graph nodes of shape `[vocab]`).
#[derive(Clone, Copy, Debug)]
pub enum SeqInput<'a> {
    Tokens(&'a [usize]),
    Soft(&'a [NodeId]),
}

/// Pads with `pad` or truncates to exactly `len` ids.
pub fn pad_to(tokens: &[usize], len: usize, pad: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens.iter().copied().take(len).collect();
    out.resize(len, pad);
    out
}

/// Sequence lengths after each stride-`s` convolution layer.
pub fn conv_lengths(dims: &ModelDims) -> Vec<usize> {
    let mut lens = Vec::with_capacity(dims.conv_layers);
    let mut len = dims.max_len;
    for _ in 0..dims.conv_layers {
        len = conv_out_len(len, dims.filter_width, dims.stride, true).expect("zero padding always fits");
        lens.push(len);
    }
    lens
}

/// Three-layer convolutional sentence encoder followed by a flattening linear projection.
///
/// Parameter names: `{role}/{net}.conv{k}.w|b`, `{role}/{net}.proj.w|b`; the token
/// embedding table name is supplied by the owner so it can be shared.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub prefix: String,
    pub embed: String,
    pub out_dim: usize,
}

impl ConvEncoder {
    pub fn new(prefix: String, embed: String, out_dim: usize) -> Self {
        ConvEncoder { prefix, embed, out_dim }
    }

    /// Conv and projection weights are uniform with variance `1 / fan_in` and
    /// biases start at zero, so source differences survive the stack at init.
    pub fn init(&self, dims: &ModelDims, params: &mut ParamSet, rng: &mut impl Rng) {
        let limit = |fan_in: usize| (3.0 / fan_in as f64).sqrt();
        let bias = |n: usize| Tensor::zeros(&[n]);
        let mut cin = dims.embed_dim;
        for k in 0..dims.conv_layers {
            params.insert_uniform(
                format!("{}.conv{k}.w", self.prefix),
                &[dims.filter_width, cin, dims.conv_channels],
                limit(dims.filter_width * cin),
                rng,
            );
            params.insert(format!("{}.conv{k}.b", self.prefix), bias(dims.conv_channels));
            cin = dims.conv_channels;
        }
        let flat = self.flat_dim(dims);
        params.insert_uniform(format!("{}.proj.w", self.prefix), &[flat, self.out_dim], limit(flat), rng);
        params.insert(format!("{}.proj.b", self.prefix), bias(self.out_dim));
    }

    fn flat_dim(&self, dims: &ModelDims) -> usize {
        let last = conv_lengths(dims).last().copied().unwrap_or(dims.max_len);
        let channels = if dims.conv_layers == 0 { dims.embed_dim } else { dims.conv_channels };
        last * channels
    }

    /// Embeds the input into a `[max_len, embed_dim]` matrix. Positions past the
    /// end of the input are zero rows, not the pad token's embedding, so padding
    /// carries no trainable signal.
    pub fn embed_input(&self, g: &mut Graph, bp: &BoundParams, dims: &ModelDims, input: SeqInput<'_>) -> Result<NodeId> {
        let table = bp.get(&self.embed);
        let (vocab, width) = (g.shape(table)[0], g.shape(table)[1]);
        let real = match input {
            SeqInput::Tokens(tokens) => tokens.len().min(dims.max_len),
            SeqInput::Soft(rows) => rows.len().min(dims.max_len),
        };
        let mut parts = Vec::with_capacity(2);
        if real > 0 {
            parts.push(match input {
                SeqInput::Tokens(tokens) => g.embedding_lookup(table, &tokens[..real])?,
                SeqInput::Soft(rows) => {
                    let mut one_hot = Vec::with_capacity(real);
                    for &row in &rows[..real] {
                        if g.shape(row) != [vocab] {
                            return Err(Error::shape("soft input", format!("row {:?} vs vocab {vocab}", g.shape(row))));
                        }
                        one_hot.push(g.reshape(row, &[1, vocab])?);
                    }
                    let stacked = g.concat(&one_hot)?;
                    g.matmul(stacked, table)?
                }
            });
        }
        if real < dims.max_len {
            parts.push(g.constant(Tensor::zeros(&[dims.max_len - real, width])));
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat(&parts)
        }
    }

    pub fn forward(&self, g: &mut Graph, bp: &BoundParams, dims: &ModelDims, input: SeqInput<'_>) -> Result<NodeId> {
        let mut x = self.embed_input(g, bp, dims, input)?;
        for k in 0..dims.conv_layers {
            let w = bp.get(&format!("{}.conv{k}.w", self.prefix));
            let b = bp.get(&format!("{}.conv{k}.b", self.prefix));
            let y = g.conv1d(x, w, b, dims.filter_width, dims.stride)?;
            x = g.tanh(y)?;
        }
        let flat = g.reshape(x, &[self.flat_dim(dims)])?;
        let w = bp.get(&format!("{}.proj.w", self.prefix));
        let b = bp.get(&format!("{}.proj.b", self.prefix));
        let proj = g.matmul(flat, w)?;
        let proj = g.add(proj, b)?;
        Ok(proj)
    }
}
