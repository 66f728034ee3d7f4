use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{ConvEncoder, SeqInput};
use super::ModelDims;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<usize>,
    /// softmax(V·Hₜ / τ) per step; empty in hard mode.
    pub soft: Vec<Vec<f64>>,
    /// log-probability of each emitted token under the τ = 1 step distribution.
    pub logprobs: Vec<f64>,
}

/// Soft decode recorded on a graph: one `[vocab]` row per step.
#[derive(Clone, Debug)]
pub struct SoftDecode {
    pub rows: Vec<NodeId>,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h0: NodeId,
    pub z: NodeId,
    pub h: NodeId,
    pub c: NodeId,
}

#[derive(Clone, Copy, Debug)]
enum StepInput {
    Token(usize),
    Soft(NodeId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub logprob: f64,
}

/// Orders by score descending, then shorter, then lexicographic ids.
pub fn rank_order(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// CNN encoder + LSTM decoder conditional language model.
///
/// Step input is `[embedding(y_{t-1}); H₀; Z]`, the initial hidden state is `H₀ + Z`
/// and the output distribution is `softmax(V·Hₜ / τ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub dims: ModelDims,
    pub role: String,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(dims: ModelDims, role: &str, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let scale = dims.init_scale;
        let gen = Generator {
            dims: dims.clone(),
            role: role.to_string(),
            params: ParamSet::new(),
        };
        params.insert_uniform(gen.pname("embed"), &[dims.vocab_size, dims.embed_dim], scale, rng);
        gen.encoder().init(&dims, &mut params, rng);
        let step_in = dims.embed_dim + 2 * dims.hidden_dim;
        params.insert_uniform(
            gen.pname("lstm.w"),
            &[step_in + dims.hidden_dim, 4 * dims.hidden_dim],
            scale,
            rng,
        );
        params.insert_uniform(gen.pname("lstm.b"), &[4 * dims.hidden_dim], scale, rng);
        params.insert_uniform(gen.pname("out.v"), &[dims.vocab_size, dims.hidden_dim], scale, rng);
        Generator { params, ..gen }
    }

    pub fn from_params(dims: ModelDims, role: &str, params: ParamSet) -> Result<Self> {
        let probe = Generator::new(dims.clone(), role, &mut crate::rng::stream(0, "shape-probe", 0));
        for (name, t) in probe.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::shape("generator params", format!("`{name}` {:?} vs {:?}", got.shape(), t.shape())));
            }
        }
        Ok(Generator {
            dims,
            role: role.to_string(),
            params,
        })
    }

    pub fn pname(&self, suffix: &str) -> String {
        format!("{}/{suffix}", self.role)
    }

    fn encoder(&self) -> ConvEncoder {
        ConvEncoder::new(self.pname("enc"), self.pname("embed"), self.dims.hidden_dim)
    }

    /// Same parameters under a different role prefix.
    pub fn with_role(&self, role: &str) -> Generator {
        Generator {
            dims: self.dims.clone(),
            role: role.to_string(),
            params: self.params.renamed(role),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundParams> {
        self.params.bind(g, trainable)
    }

    fn zero_noise(&self) -> Vec<f64> {
        vec![0.0; self.dims.hidden_dim]
    }

    fn check_noise(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dims.hidden_dim {
            return Err(Error::shape("noise", format!("Z has {} entries, H₀ has {}", z.len(), self.dims.hidden_dim)));
        }
        Ok(())
    }

    /// H₀ for a source sequence (padded or truncated to `max_len`).
    pub fn encode_graph(&self, g: &mut Graph, bp: &BoundParams, source: &[usize]) -> Result<NodeId> {
        self.encoder().forward(g, bp, &self.dims, SeqInput::Tokens(source))
    }

    pub fn encode_source(&self, source: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let h0 = self.encode_graph(&mut g, &bp, source)?;
        Ok(g.get(h0).data().to_vec())
    }

    pub fn start(&self, g: &mut Graph, h0: NodeId, z: &[f64]) -> Result<DecoderState> {
        self.check_noise(z)?;
        let z = g.constant(Tensor::vector(z.to_vec()));
        let h = g.add(h0, z)?;
        let c = g.constant(Tensor::zeros(&[self.dims.hidden_dim]));
        Ok(DecoderState { h0, z, h, c })
    }

    fn step(&self, g: &mut Graph, bp: &BoundParams, state: &DecoderState, input: StepInput) -> Result<(NodeId, DecoderState)> {
        let table = bp.get(&self.pname("embed"));
        let emb = match input {
            StepInput::Token(id) => {
                let row = g.embedding_lookup(table, &[id])?;
                g.reshape(row, &[self.dims.embed_dim])?
            }
            StepInput::Soft(row) => g.matmul(row, table)?,
        };
        let x = g.concat(&[emb, state.h0, state.z])?;
        let (h, c) = g.lstm_cell(
            x,
            state.h,
            state.c,
            bp.get(&self.pname("lstm.w")),
            bp.get(&self.pname("lstm.b")),
        )?;
        let logits = g.matmul(bp.get(&self.pname("out.v")), h)?;
        Ok((logits, DecoderState { h, c, ..*state }))
    }

    /// Greedy (hard) or soft-argmax decoding; randomness enters only through `z`.
    pub fn decode(&self, source: &[usize], z: &[f64], tau: f64, mode: DecodeMode, max_steps: usize) -> Result<DecodeOutput> {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        if max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let h0 = self.encode_graph(&mut g, &bp, source)?;
        let mut state = self.start(&mut g, h0, z)?;
        let mut input = StepInput::Token(self.dims.begin_id);
        let mut out = DecodeOutput {
            tokens: Vec::new(),
            soft: Vec::new(),
            logprobs: Vec::new(),
        };
        for _ in 0..max_steps {
            let (logits, next) = self.step(&mut g, &bp, &state, input)?;
            state = next;
            let l = g.get(logits).data().to_vec();
            let tok = argmax(&l);
            out.logprobs.push(crate::autodiff::log_softmax(&l, 1.0)[tok]);
            out.tokens.push(tok);
            input = match mode {
                DecodeMode::Hard => StepInput::Token(tok),
                DecodeMode::Soft => {
                    let row = g.softmax(logits, 0, tau)?;
                    out.soft.push(g.get(row).data().to_vec());
                    StepInput::Soft(row)
                }
            };
            if tok == self.dims.end_id {
                break;
            }
        }
        Ok(out)
    }

    /// Soft-argmax decode recorded on `g` so gradients reach the generator parameters.
    pub fn decode_soft_graph(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        source: &[usize],
        z: &[f64],
        tau: f64,
        max_steps: usize,
    ) -> Result<SoftDecode> {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        let h0 = self.encode_graph(g, bp, source)?;
        let mut state = self.start(g, h0, z)?;
        let mut input = StepInput::Token(self.dims.begin_id);
        let mut out = SoftDecode {
            rows: Vec::new(),
            tokens: Vec::new(),
        };
        for _ in 0..max_steps {
            let (logits, next) = self.step(g, bp, &state, input)?;
            state = next;
            let row = g.softmax(logits, 0, tau)?;
            let tok = argmax(g.get(logits).data());
            out.rows.push(row);
            out.tokens.push(tok);
            input = StepInput::Soft(row);
            if tok == self.dims.end_id {
                break;
            }
        }
        Ok(out)
    }

    /// Teacher-forced `log p(target | source, Z)` at τ = 1.
    pub fn seq_logprob_graph(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        source: &[usize],
        target: &[usize],
        z: Option<&[f64]>,
    ) -> Result<NodeId> {
        if target.is_empty() {
            return Err(Error::Empty("target"));
        }
        let zero = self.zero_noise();
        let h0 = self.encode_graph(g, bp, source)?;
        let mut state = self.start(g, h0, z.unwrap_or(&zero))?;
        let mut input = StepInput::Token(self.dims.begin_id);
        let mut terms = Vec::with_capacity(target.len());
        for &y in target {
            if y >= self.dims.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: y,
                    vocab: self.dims.vocab_size,
                });
            }
            let (logits, next) = self.step(g, bp, &state, input)?;
            state = next;
            let lp = g.log_softmax(logits, 0, 1.0)?;
            terms.push(g.slice(lp, y, y + 1)?);
            input = StepInput::Token(y);
        }
        let all = g.concat(&terms)?;
        g.reduce_sum(all)
    }

    pub fn seq_logprob(&self, source: &[usize], target: &[usize], z: Option<&[f64]>) -> Result<f64> {
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let lp = self.seq_logprob_graph(&mut g, &bp, source, target, z)?;
        Ok(g.get(lp).item())
    }

    /// Per-step multinomial sample at τ = 1 with Z = 0, on an existing graph.
    pub fn sample_graph(&self, g: &mut Graph, bp: &BoundParams, source: &[usize], rng: &mut impl Rng) -> Result<(Vec<usize>, f64)> {
        let h0 = self.encode_graph(g, bp, source)?;
        let mut state = self.start(g, h0, &self.zero_noise())?;
        let mut input = StepInput::Token(self.dims.begin_id);
        let mut tokens = Vec::new();
        let mut logprob = 0.0;
        for _ in 0..self.dims.max_steps {
            let (logits, next) = self.step(g, bp, &state, input)?;
            state = next;
            let lp = crate::autodiff::log_softmax(g.get(logits).data(), 1.0);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut tok = lp.len() - 1;
            for (i, &l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    tok = i;
                    break;
                }
            }
            logprob += lp[tok];
            tokens.push(tok);
            input = StepInput::Token(tok);
            if tok == self.dims.end_id {
                break;
            }
        }
        Ok((tokens, logprob))
    }

    /// Draws one response and returns it with its exact log-probability.
    pub fn sample_response(&self, source: &[usize], rng: &mut impl Rng) -> Result<(Vec<usize>, f64)> {
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        self.sample_graph(&mut g, &bp, source, rng)
    }

    /// Length-bounded beam search over τ = 1 step distributions with Z = 0.
    ///
    /// Hypotheses that emit the end token or reach `max_steps` are complete; up to
    /// `width` of them are returned, best first.
    pub fn beam_search(&self, source: &[usize], width: usize) -> Result<Vec<Hypothesis>> {
        if width < 1 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        struct Live {
            tokens: Vec<usize>,
            logprob: f64,
            state: DecoderState,
            next: usize,
        }
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let h0 = self.encode_graph(&mut g, &bp, source)?;
        let state = self.start(&mut g, h0, &self.zero_noise())?;
        let mut live = vec![Live {
            tokens: Vec::new(),
            logprob: 0.0,
            state,
            next: self.dims.begin_id,
        }];
        let mut done: Vec<Hypothesis> = Vec::new();
        while !live.is_empty() {
            let mut candidates: Vec<Live> = Vec::new();
            for hyp in &live {
                let (logits, state) = self.step(&mut g, &bp, &hyp.state, StepInput::Token(hyp.next))?;
                let lp = crate::autodiff::log_softmax(g.get(logits).data(), 1.0);
                for (tok, &l) in lp.iter().enumerate() {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    candidates.push(Live {
                        tokens,
                        logprob: hyp.logprob + l,
                        state,
                        next: tok,
                    });
                }
            }
            candidates.sort_by(|a, b| rank_order(a.logprob, &a.tokens, b.logprob, &b.tokens));
            candidates.truncate(width);
            live = Vec::new();
            for c in candidates {
                if c.next == self.dims.end_id || c.tokens.len() >= self.dims.max_steps {
                    done.push(Hypothesis {
                        tokens: c.tokens,
                        logprob: c.logprob,
                    });
                } else {
                    live.push(c);
                }
            }
        }
        done.sort_by(|a, b| rank_order(a.logprob, &a.tokens, b.logprob, &b.tokens));
        done.truncate(width);
        Ok(done)
    }
}
