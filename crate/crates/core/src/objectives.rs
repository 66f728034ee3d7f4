//! cGAN, AIM and DAIM losses with the soft-path (DPG) and score-function
//! (REINFORCE) gradient estimators.
//!
//! Sequences are passed as content ids; the end token is appended wherever a
//! model scores a target. Returned gradients are descent directions for the
//! quantity each player minimizes, ready for [`crate::params::Adam`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{accumulate, Grads, Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::rng::{stream, Rng as StreamRng};
use crate::seqmodels::{DecodeMode, Discriminator, Generator, SeqInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Seq2seq,
    Cgan,
    Aim,
    Daim,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Seq2seq => "seq2seq",
            Objective::Cgan => "cgan",
            Objective::Aim => "aim",
            Objective::Daim => "daim",
        }
    }

    pub fn adversarial(self) -> bool {
        self != Objective::Seq2seq
    }
}

/// A training pair as content ids (no begin/end markers).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn swapped(&self) -> Example {
        Example {
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }
}

pub fn with_end(tokens: &[usize], end: usize) -> Vec<usize> {
    let mut v = tokens.to_vec();
    v.push(end);
    v
}

/// Content of a decoded sequence: everything before the first end token.
pub fn strip_end(tokens: &[usize], end: usize) -> Vec<usize> {
    tokens.iter().take_while(|&&t| t != end).copied().collect()
}

/// One real and one synthetic `(source, response)` pair for the discriminator.
#[derive(Clone, Copy, Debug)]
pub struct GanItem<'a> {
    pub real_source: SeqInput<'a>,
    pub real_response: SeqInput<'a>,
    pub fake_source: SeqInput<'a>,
    pub fake_response: SeqInput<'a>,
}

#[derive(Clone, Copy, Debug)]
pub struct GanTerm {
    pub loss: NodeId,
    /// Pairs whose score difference hit the atanh clamp.
    pub clamped: usize,
}

fn f_value(diff: f64) -> f64 {
    let c = crate::autodiff::ATANH_CLAMP;
    2.0 * diff.clamp(-c, c).atanh()
}

/// `−mean f(D(real) − D(fake))` with `f(x) = 2·atanh(clamp(x))`. The
/// discriminator minimizes this value; the generator maximizes it.
pub fn gan_loss(g: &mut Graph, disc: &Discriminator, dbp: &BoundParams, items: &[GanItem<'_>]) -> Result<GanTerm> {
    if items.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut terms = Vec::with_capacity(items.len());
    let mut clamped = 0;
    for it in items {
        let real = disc.score_graph(g, dbp, it.real_source, it.real_response)?;
        let fake = disc.score_graph(g, dbp, it.fake_source, it.fake_response)?;
        let diff = g.sub(real, fake)?;
        if g.get(diff).item().abs() > crate::autodiff::ATANH_CLAMP {
            clamped += 1;
        }
        let a = g.atanh(diff)?;
        terms.push(g.scale(a, 2.0)?);
    }
    let mean = g.mean_of(&terms)?;
    let loss = g.scale(mean, -1.0)?;
    Ok(GanTerm { loss, clamped })
}

/// Which side of the pair a generator produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `p_θ(T|S)`: the decode is the response, scored as `D(T̃, S)`.
    Forward,
    /// `q_φ(S|T)`: the decode is the source, scored as `D(T, S̃)`.
    Backward,
}

#[derive(Clone, Debug)]
pub struct DpgOut {
    /// Descent gradient of `−mean D` w.r.t. the generator.
    pub grads: Grads,
    /// `D` of each soft decode against its conditioning sequence.
    pub scores: Vec<f64>,
}

/// Soft-path gradient of `mean_i D(soft_decode(x_i, Z_i), x_i)`; `batch` holds each
/// conditioning sequence with its noise draw.
pub fn dpg_generator_grad(
    gen: &Generator,
    disc: &Discriminator,
    batch: &[(Vec<usize>, Vec<f64>)],
    tau: f64,
    mode: DecodeMode,
    direction: Direction,
) -> Result<DpgOut> {
    if mode == DecodeMode::Hard {
        return Err(Error::invalid("hard decoding has no gradient path; use the soft decode"));
    }
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut g = Graph::new();
    let bp = gen.bind(&mut g, true)?;
    let dbp = disc.bind(&mut g, false)?;
    let mut nodes = Vec::with_capacity(batch.len());
    for (cond, z) in batch {
        let soft = gen.decode_soft_graph(&mut g, &bp, cond, z, tau, gen.dims.max_steps)?;
        let d = match direction {
            Direction::Forward => disc.score_graph(&mut g, &dbp, SeqInput::Tokens(cond), SeqInput::Soft(&soft.rows))?,
            Direction::Backward => disc.score_graph(&mut g, &dbp, SeqInput::Soft(&soft.rows), SeqInput::Tokens(cond))?,
        };
        nodes.push(d);
    }
    let scores = nodes.iter().map(|&n| g.get(n).item()).collect();
    let mean = g.mean_of(&nodes)?;
    let neg = g.scale(mean, -1.0)?;
    let grads = gen.params.restrict(&g.backward_scalar(neg)?);
    Ok(DpgOut { grads, scores })
}

/// Sampled responses and their rewards `log q(source | response)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiSample {
    /// `L_MI`: mean reward over the batch.
    pub value: f64,
    pub responses: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
}

/// `L_MI = mean log q(S|T)` with `T ~ policy(·|S)`.
pub fn mi_lower_bound(policy: &Generator, proposal: &Generator, sources: &[Vec<usize>], rng: &mut impl Rng) -> Result<MiSample> {
    if sources.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let end_p = policy.dims.end_id;
    let end_q = proposal.dims.end_id;
    let mut responses = Vec::with_capacity(sources.len());
    let mut rewards = Vec::with_capacity(sources.len());
    for s in sources {
        let (t, _) = policy.sample_response(s, rng)?;
        let t = strip_end(&t, end_p);
        rewards.push(proposal.seq_logprob(&t, &with_end(s, end_q), None)?);
        responses.push(t);
    }
    let value = rewards.iter().sum::<f64>() / sources.len() as f64;
    Ok(MiSample { value, responses, rewards })
}

#[derive(Clone, Debug)]
pub struct ReinforceOut {
    /// Descent gradient for the sampling model: `−mean (r_i − b)·∇ log p(T_i|S_i)`.
    pub policy: Grads,
    /// Descent gradient for the proposal: `−mean ∇ log q(S_i|T_i)`.
    pub proposal: Grads,
    pub mi: f64,
    pub baseline: f64,
    pub responses: Vec<Vec<usize>>,
}

/// Score-function gradients of `L_MI` for both models. With `use_baseline` the
/// reward is centred on the batch mean, which needs at least two sources.
pub fn reinforce_grads(
    policy: &Generator,
    proposal: &Generator,
    sources: &[Vec<usize>],
    rng: &mut impl Rng,
    use_baseline: bool,
) -> Result<ReinforceOut> {
    if use_baseline && sources.len() < 2 {
        log::warn!("batch-mean baseline with a single sample zeroes the policy gradient");
        return Err(Error::invalid("the batch-mean baseline needs a batch of at least 2"));
    }
    if sources.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = sources.len() as f64;
    let end_p = policy.dims.end_id;
    let end_q = proposal.dims.end_id;

    // Sample and score with φ trainable in one pass.
    let mut proposal_grads = Grads::new();
    let mut samples = Vec::with_capacity(sources.len());
    let mut rewards = Vec::with_capacity(sources.len());
    for s in sources {
        let mut g = Graph::new();
        let bp = policy.bind(&mut g, false)?;
        let (t, _) = policy.sample_graph(&mut g, &bp, s, rng)?;
        let mut gq = Graph::new();
        let qbp = proposal.bind(&mut gq, true)?;
        let content = strip_end(&t, end_p);
        let lq = proposal.seq_logprob_graph(&mut gq, &qbp, &content, &with_end(s, end_q), None)?;
        rewards.push(gq.get(lq).item());
        accumulate(&mut proposal_grads, &proposal.params.restrict(&gq.backward_scalar(lq)?), -1.0 / n);
        samples.push(t);
    }
    let mi = rewards.iter().sum::<f64>() / n;
    let baseline = if use_baseline { mi } else { 0.0 };

    let mut policy_grads = Grads::new();
    for ((s, t), r) in sources.iter().zip(&samples).zip(&rewards) {
        let adv = r - baseline;
        if adv == 0.0 {
            continue;
        }
        let mut g = Graph::new();
        let bp = policy.bind(&mut g, true)?;
        let lp = policy.seq_logprob_graph(&mut g, &bp, s, t, None)?;
        accumulate(&mut policy_grads, &policy.params.restrict(&g.backward_scalar(lp)?), -adv / n);
    }
    fill_zeros(&mut policy_grads, policy);
    fill_zeros(&mut proposal_grads, proposal);
    Ok(ReinforceOut {
        policy: policy_grads,
        proposal: proposal_grads,
        mi,
        baseline,
        responses: samples.iter().map(|t| strip_end(t, end_p)).collect(),
    })
}

fn fill_zeros(grads: &mut Grads, gen: &Generator) {
    for (name, t) in gen.params.iter() {
        grads
            .entry(name.clone())
            .or_insert_with(|| crate::autodiff::Tensor::zeros(t.shape()));
    }
}

/// Mean negative log-likelihood of the targets (end token appended).
pub fn mle_loss(g: &mut Graph, gen: &Generator, bp: &BoundParams, batch: &[Example]) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        terms.push(gen.seq_logprob_graph(g, bp, &ex.source, &with_end(&ex.target, gen.dims.end_id), None)?);
    }
    let mean = g.mean_of(&terms)?;
    g.scale(mean, -1.0)
}

/// MLE loss value and its descent gradient.
pub fn mle_grads(gen: &Generator, batch: &[Example]) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let bp = gen.bind(&mut g, true)?;
    let loss = mle_loss(&mut g, gen, &bp, batch)?;
    Ok((g.get(loss).item(), g.backward_scalar(loss)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub lambda: f64,
    pub mle_weight: f64,
    pub backward_gan_weight: f64,
    pub backward_mi_weight: f64,
    /// Soft-argmax temperature of the soft decode path.
    pub tau: f64,
    /// Standard deviation of the noise vector Z.
    pub sigma: f64,
    pub baseline: bool,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            lambda: 0.1,
            mle_weight: 0.001,
            backward_gan_weight: 1.0,
            backward_mi_weight: 1.0,
            tau: 0.5,
            sigma: 0.1,
            baseline: true,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda),
            ("mle_weight", self.mle_weight),
            ("backward_gan_weight", self.backward_gan_weight),
            ("backward_mi_weight", self.backward_mi_weight),
            ("sigma", self.sigma),
        ];
        for (key, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config {
                    key: format!("objective.{key}"),
                    message: format!("must be a nonnegative number, got {v}"),
                });
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config {
                key: "objective.tau".into(),
                message: format!("must be positive, got {}", self.tau),
            });
        }
        Ok(())
    }
}

/// Scalar values of every objective term on one batch. The generator ascends
/// [`LossBundle::total`]; the discriminator descends the GAN terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub gan_forward: f64,
    pub gan_backward: Option<f64>,
    pub mi_forward: Option<f64>,
    pub mi_backward: Option<f64>,
    /// Mean log-likelihood of the batch under the trained models.
    pub mle_aux: f64,
    pub lambda: f64,
    pub mle_weight: f64,
    pub backward_gan_weight: f64,
    pub backward_mi_weight: f64,
}

impl LossBundle {
    pub fn total(&self) -> f64 {
        self.gan_forward
            + self.backward_gan_weight * self.gan_backward.unwrap_or(0.0)
            + self.lambda * (self.mi_forward.unwrap_or(0.0) + self.backward_mi_weight * self.mi_backward.unwrap_or(0.0))
            + self.mle_weight * self.mle_aux
    }
}

/// Independent random streams for each stochastic term of one step, so
/// enabling one term never shifts another's draws.
pub struct TermRngs {
    pub z_forward: StreamRng,
    pub z_backward: StreamRng,
    pub mi_forward: StreamRng,
    pub mi_backward: StreamRng,
}

impl TermRngs {
    pub fn for_step(seed: u64, purpose: &str, step: u64) -> Self {
        TermRngs {
            z_forward: stream(seed, &format!("{purpose}/z-fwd"), step),
            z_backward: stream(seed, &format!("{purpose}/z-bwd"), step),
            mi_forward: stream(seed, &format!("{purpose}/mi-fwd"), step),
            mi_backward: stream(seed, &format!("{purpose}/mi-bwd"), step),
        }
    }
}

/// One `Z ~ N(0, σ²I)` per sequence.
pub fn draw_noise(count: usize, dim: usize, sigma: f64, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if sigma == 0.0 {
        return Ok(vec![vec![0.0; dim]; count]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("sigma: {e}")))?;
    Ok((0..count).map(|_| (0..dim).map(|_| normal.sample(rng)).collect()).collect())
}

/// Forward model, backward model and shared discriminator.
#[derive(Clone, Copy, Debug)]
pub struct Models<'a> {
    pub forward: &'a Generator,
    pub backward: &'a Generator,
    pub disc: &'a Discriminator,
}

#[derive(Clone, Debug)]
pub struct GeneratorUpdate {
    pub bundle: LossBundle,
    /// Descent gradient of `−total` for both generators.
    pub grads: Grads,
    pub clamped: usize,
    pub pairs: usize,
}

fn gan_value(real: &[f64], fake: &[f64]) -> (f64, usize) {
    let c = crate::autodiff::ATANH_CLAMP;
    let clamped = real.iter().zip(fake).filter(|(r, f)| (*r - *f).abs() > c).count();
    let mean = real.iter().zip(fake).map(|(r, f)| f_value(r - f)).sum::<f64>() / real.len() as f64;
    (-mean, clamped)
}

fn real_scores(disc: &Discriminator, batch: &[Example]) -> Result<Vec<f64>> {
    batch.iter().map(|ex| disc.discriminate(&ex.source, &ex.target)).collect()
}

/// Generator-side objective and gradient for one batch.
///
/// * cGAN: GAN term (soft path) plus the MLE stabilizer on the forward model.
/// * AIM: adds `λ·L_MI` with REINFORCE for θ and direct gradients for φ, and the
///   stabilizer on both models.
/// * DAIM: adds the mirrored backward GAN and MI terms, weighted by
///   `backward_gan_weight` and `backward_mi_weight`, with the same discriminator.
/// * seq2seq: plain MLE on both models.
pub fn generator_update(
    mode: Objective,
    models: Models<'_>,
    batch: &[Example],
    w: &ObjectiveWeights,
    rngs: &mut TermRngs,
) -> Result<GeneratorUpdate> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let Models { forward, backward, disc } = models;
    let swapped: Vec<Example> = batch.iter().map(Example::swapped).collect();
    let mut grads = Grads::new();

    if mode == Objective::Seq2seq {
        let (lf, gf) = mle_grads(forward, batch)?;
        let (lb, gb) = mle_grads(backward, &swapped)?;
        accumulate(&mut grads, &gf, 1.0);
        accumulate(&mut grads, &gb, 1.0);
        return Ok(GeneratorUpdate {
            bundle: LossBundle {
                gan_forward: 0.0,
                gan_backward: None,
                mi_forward: None,
                mi_backward: None,
                mle_aux: -(lf + lb),
                lambda: 0.0,
                mle_weight: 1.0,
                backward_gan_weight: 0.0,
                backward_mi_weight: 0.0,
            },
            grads,
            clamped: 0,
            pairs: 0,
        });
    }

    let with_mi = matches!(mode, Objective::Aim | Objective::Daim);
    let daim = mode == Objective::Daim;
    let mut clamped = 0;
    let mut pairs = 0;

    // Forward GAN term through the soft path.
    let sources: Vec<Vec<usize>> = batch.iter().map(|e| e.source.clone()).collect();
    let z = draw_noise(batch.len(), forward.dims.hidden_dim, w.sigma, &mut rngs.z_forward)?;
    let fwd_batch: Vec<(Vec<usize>, Vec<f64>)> = sources.iter().cloned().zip(z).collect();
    let dpg = dpg_generator_grad(forward, disc, &fwd_batch, w.tau, DecodeMode::Soft, Direction::Forward)?;
    accumulate(&mut grads, &dpg.grads, 1.0);
    let (gan_forward, c) = gan_value(&real_scores(disc, batch)?, &dpg.scores);
    clamped += c;
    pairs += batch.len();

    // MLE stabilizer.
    let (lf, gf) = mle_grads(forward, batch)?;
    accumulate(&mut grads, &gf, w.mle_weight);
    let mut mle_aux = -lf;
    if with_mi {
        let (lb, gb) = mle_grads(backward, &swapped)?;
        accumulate(&mut grads, &gb, w.mle_weight);
        mle_aux -= lb;
    }

    let mut mi_forward = None;
    if with_mi {
        let rf = reinforce_grads(forward, backward, &sources, &mut rngs.mi_forward, w.baseline)?;
        accumulate(&mut grads, &rf.policy, w.lambda);
        accumulate(&mut grads, &rf.proposal, w.lambda);
        mi_forward = Some(rf.mi);
    }

    let (mut gan_backward, mut mi_backward) = (None, None);
    if daim && w.backward_gan_weight > 0.0 {
        let targets: Vec<Vec<usize>> = batch.iter().map(|e| e.target.clone()).collect();
        let z = draw_noise(batch.len(), backward.dims.hidden_dim, w.sigma, &mut rngs.z_backward)?;
        let bwd_batch: Vec<(Vec<usize>, Vec<f64>)> = targets.into_iter().zip(z).collect();
        let dpg = dpg_generator_grad(backward, disc, &bwd_batch, w.tau, DecodeMode::Soft, Direction::Backward)?;
        accumulate(&mut grads, &dpg.grads, w.backward_gan_weight);
        let (v, c) = gan_value(&real_scores(disc, batch)?, &dpg.scores);
        gan_backward = Some(v);
        clamped += c;
        pairs += batch.len();
    }
    if daim && w.backward_mi_weight > 0.0 {
        let targets: Vec<Vec<usize>> = batch.iter().map(|e| e.target.clone()).collect();
        let rb = reinforce_grads(backward, forward, &targets, &mut rngs.mi_backward, w.baseline)?;
        accumulate(&mut grads, &rb.policy, w.lambda * w.backward_mi_weight);
        accumulate(&mut grads, &rb.proposal, w.lambda * w.backward_mi_weight);
        mi_backward = Some(rb.mi);
    }

    Ok(GeneratorUpdate {
        bundle: LossBundle {
            gan_forward,
            gan_backward,
            mi_forward,
            mi_backward,
            mle_aux,
            lambda: if with_mi { w.lambda } else { 0.0 },
            mle_weight: w.mle_weight,
            backward_gan_weight: if daim { w.backward_gan_weight } else { 0.0 },
            backward_mi_weight: if daim { w.backward_mi_weight } else { 0.0 },
        },
        grads,
        clamped,
        pairs,
    })
}

/// All DAIM terms on one batch.
pub fn daim_loss(models: Models<'_>, batch: &[Example], w: &ObjectiveWeights, rngs: &mut TermRngs) -> Result<LossBundle> {
    Ok(generator_update(Objective::Daim, models, batch, w, rngs)?.bundle)
}

#[derive(Clone, Debug)]
pub struct DiscriminatorUpdate {
    pub loss: f64,
    /// Descent gradient of the GAN loss w.r.t. the discriminator.
    pub grads: Grads,
    pub clamped: usize,
    pub pairs: usize,
}

/// Discriminator step: minimizes the forward GAN loss, plus the weighted
/// backward GAN loss under DAIM. Synthetic sequences are soft decodes.
pub fn discriminator_update(
    mode: Objective,
    models: Models<'_>,
    batch: &[Example],
    w: &ObjectiveWeights,
    rngs: &mut TermRngs,
) -> Result<DiscriminatorUpdate> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let Models { forward, backward, disc } = models;
    let mut g = Graph::new();
    let fbp = forward.bind(&mut g, false)?;
    let dbp = disc.bind(&mut g, true)?;

    let z = draw_noise(batch.len(), forward.dims.hidden_dim, w.sigma, &mut rngs.z_forward)?;
    let mut fakes = Vec::with_capacity(batch.len());
    for (ex, z) in batch.iter().zip(&z) {
        fakes.push(forward.decode_soft_graph(&mut g, &fbp, &ex.source, z, w.tau, forward.dims.max_steps)?.rows);
    }
    let items: Vec<GanItem<'_>> = batch
        .iter()
        .zip(&fakes)
        .map(|(ex, rows)| GanItem {
            real_source: SeqInput::Tokens(&ex.source),
            real_response: SeqInput::Tokens(&ex.target),
            fake_source: SeqInput::Tokens(&ex.source),
            fake_response: SeqInput::Soft(rows),
        })
        .collect();
    let fwd_term = gan_loss(&mut g, disc, &dbp, &items)?;
    let mut clamped = fwd_term.clamped;
    let mut pairs = batch.len();
    let mut loss = fwd_term.loss;

    if mode == Objective::Daim && w.backward_gan_weight > 0.0 {
        let bbp = backward.bind(&mut g, false)?;
        let z = draw_noise(batch.len(), backward.dims.hidden_dim, w.sigma, &mut rngs.z_backward)?;
        let mut fake_sources = Vec::with_capacity(batch.len());
        for (ex, z) in batch.iter().zip(&z) {
            fake_sources.push(backward.decode_soft_graph(&mut g, &bbp, &ex.target, z, w.tau, backward.dims.max_steps)?.rows);
        }
        let items: Vec<GanItem<'_>> = batch
            .iter()
            .zip(&fake_sources)
            .map(|(ex, rows)| GanItem {
                real_source: SeqInput::Tokens(&ex.source),
                real_response: SeqInput::Tokens(&ex.target),
                fake_source: SeqInput::Soft(rows),
                fake_response: SeqInput::Tokens(&ex.target),
            })
            .collect();
        let bwd_term = gan_loss(&mut g, disc, &dbp, &items)?;
        clamped += bwd_term.clamped;
        pairs += batch.len();
        let weighted = g.scale(bwd_term.loss, w.backward_gan_weight)?;
        loss = g.add(loss, weighted)?;
    }
    let value = g.get(loss).item();
    let grads = disc.params.restrict(&g.backward_scalar(loss)?);
    Ok(DiscriminatorUpdate {
        loss: value,
        grads,
        clamped,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::autodiff::{grad_check, Bindings, Tensor};
    use crate::seqmodels::ModelDims;
    use crate::params::ParamSet;

    fn small_dims(vocab: usize) -> ModelDims {
        ModelDims {
            vocab_size: vocab,
            embed_dim: 3,
            hidden_dim: 4,
            disc_dim: 3,
            conv_channels: 2,
            conv_layers: 2,
            filter_width: 3,
            stride: 2,
            max_len: 4,
            max_steps: 3,
            init_scale: 0.4,
            ..ModelDims::default()
        }
    }

    /// Every parameter redrawn uniformly in `[-0.5, 0.5]`, so no gradient
    /// coordinate is small enough to drown in finite-difference rounding.
    fn scrambled(params: &ParamSet, seed: u64) -> ParamSet {
        let mut rng = stream(seed, "scramble", 0);
        let mut out = ParamSet::new();
        for (n, t) in params.iter() {
            out.insert_uniform(n.clone(), t.shape(), 0.5, &mut rng);
        }
        out
    }

    fn models(seed: u64, dims: &ModelDims) -> (Generator, Generator, Discriminator) {
        (
            Generator::new(dims.clone(), "fwd", &mut stream(seed, "fwd", 0)),
            Generator::new(dims.clone(), "bwd", &mut stream(seed, "bwd", 0)),
            Discriminator::new(dims.clone(), &mut stream(seed, "disc", 0)),
        )
    }

    #[test]
    fn f_reference_values() {
        assert_eq!(f_value(0.0), 0.0);
        assert_abs_diff_eq!(-f_value(0.5), -1.0986122886681098, epsilon = 1e-14);
        assert!(f_value(1.5).is_finite());
        assert_eq!(f_value(1.5), f_value(2.0));
    }

    #[test]
    fn equal_scores_give_zero_gan_loss() {
        let dims = small_dims(6);
        let (_, _, disc) = models(1, &dims);
        let mut g = Graph::new();
        let dbp = disc.bind(&mut g, true).unwrap();
        let s = [4, 5];
        let t = [5, 4, 4];
        let item = GanItem {
            real_source: SeqInput::Tokens(&s),
            real_response: SeqInput::Tokens(&t),
            fake_source: SeqInput::Tokens(&s),
            fake_response: SeqInput::Tokens(&t),
        };
        let term = gan_loss(&mut g, &disc, &dbp, &[item, item]).unwrap();
        assert_eq!(g.get(term.loss).item(), 0.0);
        assert!(gan_loss(&mut g, &disc, &dbp, &[]).is_err());
    }

    #[test]
    fn gan_loss_passes_grad_check() {
        let dims = small_dims(6);
        let (fwd, _, disc) = models(2, &dims);
        let mut g = Graph::new();
        let fbp = fwd.bind(&mut g, true).unwrap();
        let dbp = disc.bind(&mut g, true).unwrap();
        let s = [4, 5, 4];
        let t = [5, 4];
        let soft = fwd.decode_soft_graph(&mut g, &fbp, &s, &[0.1, -0.2, 0.0, 0.3], 0.5, 3).unwrap();
        let item = GanItem {
            real_source: SeqInput::Tokens(&s),
            real_response: SeqInput::Tokens(&t),
            fake_source: SeqInput::Tokens(&s),
            fake_response: SeqInput::Soft(&soft.rows),
        };
        let term = gan_loss(&mut g, &disc, &dbp, &[item]).unwrap();
        let report = grad_check(&mut g, term.loss, &Bindings::new(), 1e-5, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn dpg_is_zero_when_response_is_ignored() {
        let dims = small_dims(6);
        let (fwd, _, mut disc) = models(3, &dims);
        // Zeroing the response projection makes W_t(T) its bias alone.
        let name = "disc/tgt.proj.w";
        let shape = disc.params.get(name).unwrap().shape().to_vec();
        disc.params.insert(name, Tensor::zeros(&shape));
        disc.params.insert("disc/tgt.proj.b", Tensor::filled(&[dims.disc_dim], 0.3));
        let batch = vec![(vec![4, 5], vec![0.1; 4]), (vec![5], vec![-0.2; 4])];
        let out = dpg_generator_grad(&fwd, &disc, &batch, 0.5, DecodeMode::Soft, Direction::Forward).unwrap();
        assert!(out.grads.values().all(|t| t.max_abs() == 0.0));
        assert!(dpg_generator_grad(&fwd, &disc, &batch, 0.5, DecodeMode::Hard, Direction::Forward).is_err());
    }

    #[test]
    fn dpg_mean_is_invariant_to_duplication() {
        let dims = small_dims(6);
        let (fwd, _, disc) = models(4, &dims);
        let one = vec![(vec![4, 5], vec![0.3, 0.0, -0.1, 0.2])];
        let two = vec![one[0].clone(), one[0].clone()];
        let a = dpg_generator_grad(&fwd, &disc, &one, 0.5, DecodeMode::Soft, Direction::Forward).unwrap();
        let b = dpg_generator_grad(&fwd, &disc, &two, 0.5, DecodeMode::Soft, Direction::Forward).unwrap();
        for (k, v) in &a.grads {
            for (x, y) in v.data().iter().zip(b.grads[k].data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-15);
            }
        }
    }

    /// One decoding step over a 2-token vocabulary, checked by central differences
    /// on every generator coordinate.
    #[test]
    fn dpg_matches_finite_differences() {
        let dims = ModelDims {
            vocab_size: 2,
            max_steps: 1,
            pad_id: 0,
            begin_id: 0,
            end_id: 1,
            ..small_dims(2)
        };
        let (fwd, _, disc) = models(5, &dims);
        let batch = vec![(vec![1, 0], vec![0.2, -0.1, 0.05, 0.0])];
        let out = dpg_generator_grad(&fwd, &disc, &batch, 0.7, DecodeMode::Soft, Direction::Forward).unwrap();
        let objective = |gen: &Generator| -> f64 {
            let mut g = Graph::new();
            let bp = gen.bind(&mut g, false).unwrap();
            let dbp = disc.bind(&mut g, false).unwrap();
            let soft = gen.decode_soft_graph(&mut g, &bp, &batch[0].0, &batch[0].1, 0.7, 1).unwrap();
            let d = disc
                .score_graph(&mut g, &dbp, SeqInput::Tokens(&batch[0].0), SeqInput::Soft(&soft.rows))
                .unwrap();
            -g.get(d).item()
        };
        let eps = 1e-5;
        for (name, t) in fwd.params.iter() {
            for k in 0..t.len() {
                let mut plus = fwd.clone();
                plus.params.get_mut(name).unwrap().data_mut()[k] += eps;
                let mut minus = fwd.clone();
                minus.params.get_mut(name).unwrap().data_mut()[k] -= eps;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let analytic = out.grads[name].data()[k];
                let rel = crate::autodiff::relative_error(analytic, numeric);
                assert!(rel < 1e-4 || (analytic - numeric).abs() < 1e-9, "{name}[{k}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn mle_of_uniform_model() {
        let dims = small_dims(4);
        let mut gen = Generator::new(dims.clone(), "fwd", &mut stream(6, "g", 0));
        gen.params.insert("fwd/out.v", Tensor::zeros(&[4, 4]));
        let batch = vec![Example {
            source: vec![3],
            target: vec![3, 3],
        }];
        let (loss, _) = mle_grads(&gen, &batch).unwrap();
        assert_abs_diff_eq!(loss, 3.0 * 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 4.15888, epsilon = 5e-6);
    }

    #[test]
    fn mle_graph_passes_grad_check() {
        let dims = small_dims(6);
        let mut gen = Generator::new(dims, "fwd", &mut stream(7, "g", 0));
        gen.params = scrambled(&gen.params, 7);
        let mut g = Graph::new();
        let bp = gen.bind(&mut g, true).unwrap();
        let batch = vec![
            Example {
                source: vec![4, 5],
                target: vec![5],
            },
            Example {
                source: vec![5],
                target: vec![4, 4],
            },
        ];
        let loss = mle_loss(&mut g, &gen, &bp, &batch).unwrap();
        let report = grad_check(&mut g, loss, &Bindings::new(), 1e-5, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn uniform_proposal_gives_minus_log_four() {
        // A uniform backward model over 4 tokens scores the one-step source [end] at 1/4.
        let dims = small_dims(4);
        let fwd = Generator::new(dims.clone(), "fwd", &mut stream(8, "g", 0));
        let mut bwd = Generator::new(dims, "bwd", &mut stream(8, "b", 0));
        bwd.params.insert("bwd/out.v", Tensor::zeros(&[4, 4]));
        let sources = vec![vec![], vec![]];
        let mi = mi_lower_bound(&fwd, &bwd, &sources, &mut stream(8, "s", 0)).unwrap();
        assert_abs_diff_eq!(mi.value, -(4f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn constant_reward_with_baseline_has_zero_policy_gradient() {
        let dims = small_dims(4);
        let fwd = Generator::new(dims.clone(), "fwd", &mut stream(9, "g", 0));
        let mut bwd = Generator::new(dims, "bwd", &mut stream(9, "b", 0));
        bwd.params.insert("bwd/out.v", Tensor::zeros(&[4, 4]));
        let sources = vec![vec![3], vec![3], vec![3]];
        let out = reinforce_grads(&fwd, &bwd, &sources, &mut stream(9, "s", 0), true).unwrap();
        assert!(out.policy.values().all(|t| t.max_abs() == 0.0));
        assert!(reinforce_grads(&fwd, &bwd, &sources[..1], &mut stream(9, "s", 0), true).is_err());
    }

    #[test]
    fn aim_equals_daim_without_backward_terms() {
        let dims = small_dims(6);
        let (fwd, bwd, disc) = models(10, &dims);
        let m = Models {
            forward: &fwd,
            backward: &bwd,
            disc: &disc,
        };
        let batch = vec![
            Example {
                source: vec![4, 5],
                target: vec![5, 4],
            },
            Example {
                source: vec![5],
                target: vec![4],
            },
        ];
        let w = ObjectiveWeights {
            backward_gan_weight: 0.0,
            backward_mi_weight: 0.0,
            ..ObjectiveWeights::default()
        };
        let a = generator_update(Objective::Aim, m, &batch, &w, &mut TermRngs::for_step(1, "gen", 0)).unwrap();
        let d = generator_update(Objective::Daim, m, &batch, &w, &mut TermRngs::for_step(1, "gen", 0)).unwrap();
        assert_eq!(a.grads, d.grads);
        assert_eq!(a.bundle.total(), d.bundle.total());
        let full = daim_loss(m, &batch, &ObjectiveWeights::default(), &mut TermRngs::for_step(1, "gen", 0)).unwrap();
        assert!(full.gan_backward.is_some() && full.mi_backward.is_some());
        let no_lambda = ObjectiveWeights {
            lambda: 0.0,
            mle_weight: 0.0,
            ..ObjectiveWeights::default()
        };
        let b = daim_loss(m, &batch, &no_lambda, &mut TermRngs::for_step(1, "gen", 0)).unwrap();
        assert_eq!(b.total(), b.gan_forward + b.gan_backward.unwrap());
    }

    /// With identical weights under swapped roles and a palindromic pair, the
    /// backward GAN term mirrors the forward one.
    #[test]
    fn forward_and_backward_gan_terms_mirror() {
        let dims = small_dims(6);
        let (fwd, _, mut disc) = models(11, &dims);
        let bwd = fwd.with_role("bwd");
        // Make the discriminator symmetric: target network = source network.
        let src: Vec<(String, Tensor)> = disc
            .params
            .iter()
            .filter(|(n, _)| n.starts_with("disc/src."))
            .map(|(n, t)| (n.replacen("disc/src.", "disc/tgt.", 1), t.clone()))
            .collect();
        for (n, t) in src {
            disc.params.insert(n, t);
        }
        let batch = vec![Example {
            source: vec![4, 5],
            target: vec![4, 5],
        }];
        let w = ObjectiveWeights {
            lambda: 0.0,
            baseline: false,
            ..ObjectiveWeights::default()
        };
        let m = Models {
            forward: &fwd,
            backward: &bwd,
            disc: &disc,
        };
        let mut rngs = TermRngs::for_step(3, "gen", 0);
        rngs.z_backward = stream(3, "gen/z-fwd", 0);
        let b = daim_loss(m, &batch, &w, &mut rngs).unwrap();
        assert_abs_diff_eq!(b.gan_forward, b.gan_backward.unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn discriminator_step_reduces_its_loss() {
        let dims = small_dims(6);
        let batch = vec![
            Example {
                source: vec![4, 5],
                target: vec![5, 4],
            },
            Example {
                source: vec![5, 5],
                target: vec![4],
            },
        ];
        let w = ObjectiveWeights::default();
        // First seed whose discriminator starts off the atanh clamp (a clamped
        // start has zero gradient by construction).
        let (fwd, bwd, mut disc) = (0..50)
            .map(|seed| models(seed, &dims))
            .find(|(f, b, d)| {
                let m = Models {
                    forward: f,
                    backward: b,
                    disc: d,
                };
                let up = discriminator_update(Objective::Cgan, m, &batch, &w, &mut TermRngs::for_step(0, "disc", 0)).unwrap();
                up.clamped == 0
            })
            .expect("an unclamped start among 50 seeds");
        let mut adam = crate::params::Adam::new(crate::params::AdamConfig {
            lr: 0.01,
            ..Default::default()
        });
        let mut losses = Vec::new();
        for _ in 0..30 {
            let m = Models {
                forward: &fwd,
                backward: &bwd,
                disc: &disc,
            };
            let up = discriminator_update(Objective::Cgan, m, &batch, &w, &mut TermRngs::for_step(0, "disc", 0)).unwrap();
            losses.push(up.loss);
            adam.update(&mut disc.params, &up.grads).unwrap();
        }
        assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    }
}
