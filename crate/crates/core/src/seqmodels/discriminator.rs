use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{ConvEncoder, SeqInput};
use super::ModelDims;
use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::params::{BoundParams, ParamSet};

/// Embedding-based pair scorer: `D(T, S) = cos(W_s(S), W_t(T))`.
///
/// `W_s` and `W_t` are separate conv encoders with their own word tables; real and
/// synthetic responses share `W_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub dims: ModelDims,
    pub params: ParamSet,
}

pub const ROLE: &str = "disc";

impl Discriminator {
    pub fn new(dims: ModelDims, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let scale = dims.init_scale;
        for net in [Self::source_net(&dims), Self::target_net(&dims)] {
            params.insert_uniform(net.embed.clone(), &[dims.vocab_size, dims.embed_dim], scale, rng);
            net.init(&dims, &mut params, rng);
        }
        Discriminator { dims, params }
    }

    pub fn from_params(dims: ModelDims, params: ParamSet) -> Result<Self> {
        let probe = Discriminator::new(dims.clone(), &mut crate::rng::stream(0, "shape-probe", 0));
        for (name, t) in probe.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(crate::Error::shape("discriminator params", format!("`{name}`")));
            }
        }
        Ok(Discriminator { dims, params })
    }

    fn source_net(dims: &ModelDims) -> ConvEncoder {
        ConvEncoder::new(format!("{ROLE}/src"), format!("{ROLE}/src.embed"), dims.disc_dim)
    }

    fn target_net(dims: &ModelDims) -> ConvEncoder {
        ConvEncoder::new(format!("{ROLE}/tgt"), format!("{ROLE}/tgt.embed"), dims.disc_dim)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundParams> {
        self.params.bind(g, trainable)
    }

    /// `W_s(S)` on the graph.
    pub fn embed_source(&self, g: &mut Graph, bp: &BoundParams, source: SeqInput<'_>) -> Result<NodeId> {
        Self::source_net(&self.dims).forward(g, bp, &self.dims, source)
    }

    /// `W_t(T)` on the graph.
    pub fn embed_target(&self, g: &mut Graph, bp: &BoundParams, target: SeqInput<'_>) -> Result<NodeId> {
        Self::target_net(&self.dims).forward(g, bp, &self.dims, target)
    }

    pub fn score_graph(&self, g: &mut Graph, bp: &BoundParams, source: SeqInput<'_>, response: SeqInput<'_>) -> Result<NodeId> {
        let s = self.embed_source(g, bp, source)?;
        let t = self.embed_target(g, bp, response)?;
        g.cosine_similarity(s, t)
    }

    /// Score of a hard response for a source; always in `[-1, 1]`.
    pub fn discriminate(&self, source: &[usize], response: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let d = self.score_graph(&mut g, &bp, SeqInput::Tokens(source), SeqInput::Tokens(response))?;
        Ok(g.get(d).item())
    }
}
