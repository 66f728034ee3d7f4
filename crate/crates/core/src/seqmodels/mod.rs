//! CNN-LSTM generators and the embedding-cosine discriminator.
//!
//! The forward generator p(T|S) and the backward proposal q(S|T) are the same
//! [`Generator`] type with a different parameter prefix; the backward model simply
//! receives the response as its source.

mod discriminator;
mod encoder;
mod generator;

use serde::{Deserialize, Serialize};

pub use discriminator::Discriminator;
pub use encoder::{conv_lengths, pad_to, ConvEncoder, SeqInput};
pub use generator::{rank_order, DecodeMode, DecodeOutput, DecoderState, Generator, Hypothesis, SoftDecode};

pub const PAD: usize = 0;
pub const BEGIN: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;

/// Network sizes shared by all three models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub vocab_size: usize,
    /// Word embedding width d_w.
    pub embed_dim: usize,
    /// H₀ and Z width d_h; also the LSTM state width.
    pub hidden_dim: usize,
    /// Discriminator sentence embedding width d_e.
    pub disc_dim: usize,
    pub conv_channels: usize,
    pub conv_layers: usize,
    pub filter_width: usize,
    pub stride: usize,
    /// Encoder input length L.
    pub max_len: usize,
    pub max_steps: usize,
    pub pad_id: usize,
    pub begin_id: usize,
    pub end_id: usize,
    pub init_scale: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            vocab_size: 64,
            embed_dim: 16,
            hidden_dim: 32,
            disc_dim: 16,
            conv_channels: 16,
            conv_layers: 3,
            filter_width: 5,
            stride: 2,
            max_len: 16,
            max_steps: 12,
            pad_id: PAD,
            begin_id: BEGIN,
            end_id: END,
            init_scale: 0.08,
        }
    }
}

impl ModelDims {
    /// Sizes used for the full-scale runs: 300-d embeddings, H₀ of 100, 20k vocabulary.
    pub fn full_scale() -> Self {
        ModelDims {
            vocab_size: 20_000,
            embed_dim: 300,
            hidden_dim: 100,
            disc_dim: 100,
            conv_channels: 300,
            max_len: 56,
            max_steps: 53,
            ..ModelDims::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("disc_dim", self.disc_dim),
            ("conv_channels", self.conv_channels),
            ("filter_width", self.filter_width),
            ("stride", self.stride),
            ("max_len", self.max_len),
            ("max_steps", self.max_steps),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(crate::Error::Config {
                    key: format!("model.{key}"),
                    message: "must be positive".into(),
                });
            }
        }
        for (key, id) in [("pad_id", self.pad_id), ("begin_id", self.begin_id), ("end_id", self.end_id)] {
            if id >= self.vocab_size {
                return Err(crate::Error::Config {
                    key: format!("model.{key}"),
                    message: format!("{id} outside vocabulary of {}", self.vocab_size),
                });
            }
        }
        Ok(())
    }
}
