//! The oracle and invariant suite behind `aimlab selftest` and the acceptance
//! tests: one function per check, each returning a serializable report.
//!
//! Reports carry no wall-clock data, so two runs with the same seed serialize to
//! identical bytes. Callers time the checks themselves.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::autodiff::{grad_check, relative_error, softmax, Bindings, Graph, NodeId, Tensor};
use crate::corpus::{build_vocab, generate_synthetic, SyntheticTask, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{dist_n, ent_n, MetricsConfig, MetricsReport};
use crate::objectives::{gan_loss, mle_loss, strip_end, Example, GanItem, Objective};
use crate::oracles::{
    conditional_entropy, entropy, estimator_variance_probe, exact_expected_gradient, exact_expected_reward, exact_mi,
    exact_posterior, median, reinforce_moments, variance_ratios, variational_bound, Estimator, JointTable, ToyGan,
};
use crate::params::ParamSet;
use crate::rng::{stream, Rng};
use crate::seqmodels::{Discriminator, Generator, ModelDims, SeqInput};
use crate::trainer::{
    candidates, evaluate_model, hex, pick, prepare_data, pretrain, train_adversarial, Checkpoint, DecodeConfig, PreparedData,
    TrainConfig,
};

pub const GRAD_EPSILON: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
}

impl CheckReport {
    fn new(id: u8, name: &str, passed: bool, summary: String, details: Value) -> Self {
        CheckReport {
            id,
            name: name.into(),
            passed,
            summary,
            details,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {}  {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.summary
        )
    }

    /// Canonical JSON used for byte comparisons.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports are plain data")
    }
}

/// Identifiers accepted by [`run_check`].
pub const CHECK_IDS: [u8; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];

pub fn run_check(id: u8, seed: u64) -> Result<CheckReport> {
    match id {
        1 => gradient_correctness(seed),
        2 => soft_argmax_limit(seed),
        3 => bound_tightness(seed),
        4 => reinforce_unbiasedness(seed),
        5 => variance_reduction(seed),
        6 => metric_closed_forms(),
        7 => entropy_identity(seed),
        8 => directional_ordering(seed),
        9 => mmi_sanity(seed),
        _ => Err(Error::invalid(format!("no check with id {id}; known ids are 1-9"))),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

/// Small dimensions shared by the gradient and estimator checks.
pub fn toy_dims(vocab: usize) -> ModelDims {
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
        init_scale: 0.5,
        ..ModelDims::default()
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive shape")
}

/// Random weighted sum of `out`, so every output coordinate reaches the scalar.
fn weighted_sum(g: &mut Graph, out: NodeId, rng: &mut Rng) -> Result<NodeId> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(uniform(rng, &shape, -1.0, 1.0));
    let m = g.mul(out, w)?;
    g.reduce_sum(m)
}

const OP_KINDS: [&str; 22] = [
    "matmul",
    "conv1d",
    "add",
    "sub",
    "elementwise_mul",
    "scale",
    "concat",
    "slice",
    "reshape",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "reduce_sum",
    "reduce_mean",
    "max_over_axis",
    "cosine_similarity",
    "atanh",
    "embedding_lookup",
    "lstm_cell",
];

/// A scalar graph exercising one op kind on random inputs.
fn op_instance(kind: &str, rng: &mut Rng, variant: usize) -> Result<(Graph, NodeId)> {
    let mut g = Graph::new();
    let p = |g: &mut Graph, name: &str, shape: &[usize], lo: f64, hi: f64, rng: &mut Rng| g.param(name, uniform(rng, shape, lo, hi));
    let out = match kind {
        "matmul" => {
            let a = p(&mut g, "a", &[3, 4], -1.0, 1.0, rng)?;
            if variant.is_multiple_of(2) {
                let b = p(&mut g, "b", &[4, 2], -1.0, 1.0, rng)?;
                g.matmul(a, b)?
            } else {
                let v = p(&mut g, "v", &[4], -1.0, 1.0, rng)?;
                g.matmul(a, v)?
            }
        }
        "conv1d" => {
            let x = p(&mut g, "x", &[5, 2], -1.0, 1.0, rng)?;
            let w = p(&mut g, "w", &[3, 2, 3], -1.0, 1.0, rng)?;
            let b = p(&mut g, "b", &[3], -1.0, 1.0, rng)?;
            g.conv1d(x, w, b, 3, 1 + variant % 2)?
        }
        "add" | "sub" => {
            let a = p(&mut g, "a", &[3, 4], -1.0, 1.0, rng)?;
            let b = if variant.is_multiple_of(2) {
                p(&mut g, "b", &[3, 4], -1.0, 1.0, rng)?
            } else {
                p(&mut g, "b", &[4], -1.0, 1.0, rng)?
            };
            if kind == "add" {
                g.add(a, b)?
            } else {
                g.sub(a, b)?
            }
        }
        "elementwise_mul" => {
            let a = p(&mut g, "a", &[6], -1.0, 1.0, rng)?;
            let b = p(&mut g, "b", &[6], -1.0, 1.0, rng)?;
            g.mul(a, b)?
        }
        "scale" => {
            let a = p(&mut g, "a", &[5], -1.0, 1.0, rng)?;
            g.scale(a, -1.7)?
        }
        "concat" => {
            let a = p(&mut g, "a", &[2, 3], -1.0, 1.0, rng)?;
            let b = p(&mut g, "b", &[1, 3], -1.0, 1.0, rng)?;
            g.concat(&[a, b])?
        }
        "slice" => {
            let a = p(&mut g, "a", &[4, 3], -1.0, 1.0, rng)?;
            g.slice(a, 1, 3)?
        }
        "reshape" => {
            let a = p(&mut g, "a", &[2, 3], -1.0, 1.0, rng)?;
            g.reshape(a, &[3, 2])?
        }
        "tanh" => {
            let a = p(&mut g, "a", &[6], -2.0, 2.0, rng)?;
            g.tanh(a)?
        }
        "sigmoid" => {
            let a = p(&mut g, "a", &[6], -3.0, 3.0, rng)?;
            g.sigmoid(a)?
        }
        "exp" => {
            let a = p(&mut g, "a", &[6], -2.0, 2.0, rng)?;
            g.exp(a)?
        }
        "log" => {
            let a = p(&mut g, "a", &[6], 0.5, 3.0, rng)?;
            g.log(a)?
        }
        "softmax" | "log_softmax" => {
            let (shape, axis) = if variant.is_multiple_of(2) { (vec![5], 0) } else { (vec![3, 4], 1) };
            let a = p(&mut g, "a", &shape, -2.0, 2.0, rng)?;
            if kind == "softmax" {
                g.softmax(a, axis, 0.7)?
            } else {
                g.log_softmax(a, axis, 0.7)?
            }
        }
        "reduce_sum" => {
            let a = p(&mut g, "a", &[3, 2], -1.0, 1.0, rng)?;
            g.reduce_sum(a)?
        }
        "reduce_mean" => {
            let a = p(&mut g, "a", &[7], -1.0, 1.0, rng)?;
            g.reduce_mean(a)?
        }
        "max_over_axis" => {
            let a = p(&mut g, "a", &[3, 4], -1.0, 1.0, rng)?;
            g.max_over_axis(a, variant % 2)?
        }
        "cosine_similarity" => {
            let a = p(&mut g, "a", &[5], -1.0, 1.0, rng)?;
            let b = p(&mut g, "b", &[5], -1.0, 1.0, rng)?;
            g.cosine_similarity(a, b)?
        }
        "atanh" => {
            let a = p(&mut g, "a", &[6], -0.9, 0.9, rng)?;
            g.atanh(a)?
        }
        "embedding_lookup" => {
            let t = p(&mut g, "table", &[5, 3], -1.0, 1.0, rng)?;
            g.embedding_lookup(t, &[1, 3, 1, 4])?
        }
        "lstm_cell" => {
            let x = p(&mut g, "x", &[3], -1.0, 1.0, rng)?;
            let h = p(&mut g, "h", &[2], -1.0, 1.0, rng)?;
            let c = p(&mut g, "c", &[2], -1.0, 1.0, rng)?;
            let w = p(&mut g, "w", &[5, 8], -1.0, 1.0, rng)?;
            let b = p(&mut g, "b", &[8], -1.0, 1.0, rng)?;
            let (h2, c2) = g.lstm_cell(x, h, c, w, b)?;
            g.concat(&[h2, c2])?
        }
        other => return Err(Error::invalid(format!("unknown op kind `{other}`"))),
    };
    let loss = weighted_sum(&mut g, out, rng)?;
    Ok((g, loss))
}

/// Redraws every parameter uniformly in `[-0.5, 0.5]`.
fn scrambled(params: &ParamSet, rng: &mut Rng) -> ParamSet {
    let mut out = ParamSet::new();
    for (n, t) in params.iter() {
        out.insert_uniform(n.clone(), t.shape(), 0.5, rng);
    }
    out
}

fn random_tokens(rng: &mut Rng, dims: &ModelDims, max: usize) -> Vec<usize> {
    let len = rng.random_range(1..=max);
    (0..len).map(|_| rng.random_range(4..dims.vocab_size)).collect()
}

fn random_noise(rng: &mut Rng, dims: &ModelDims) -> Vec<f64> {
    (0..dims.hidden_dim).map(|_| rng.random_range(-0.3..0.3)).collect()
}

/// The loss graphs of the objectives on one random instance: `gan` (two pairs,
/// forward soft decodes as fakes, generator and discriminator trainable),
/// `mle` (two pairs) and `soft_path` (`−mean D` of soft decodes, generator
/// trainable).
fn model_instance(kind: &str, seed: u64, index: u64) -> Result<(Graph, NodeId)> {
    let dims = toy_dims(6);
    let mut rng = stream(seed, &format!("check1/{kind}"), index);
    let mut gen = Generator::new(dims.clone(), "fwd", &mut rng);
    gen.params = scrambled(&gen.params, &mut rng);
    let mut disc = Discriminator::new(dims.clone(), &mut rng);
    disc.params = scrambled(&disc.params, &mut rng);
    let pairs: Vec<Example> = (0..2)
        .map(|_| Example {
            source: random_tokens(&mut rng, &dims, 4),
            target: random_tokens(&mut rng, &dims, 2),
        })
        .collect();
    let mut g = Graph::new();
    let loss = match kind {
        "gan" => {
            let fbp = gen.bind(&mut g, true)?;
            let dbp = disc.bind(&mut g, true)?;
            let mut fakes = Vec::new();
            for ex in &pairs {
                let z = random_noise(&mut rng, &dims);
                fakes.push(gen.decode_soft_graph(&mut g, &fbp, &ex.source, &z, 0.5, dims.max_steps)?.rows);
            }
            let items: Vec<GanItem<'_>> = pairs
                .iter()
                .zip(&fakes)
                .map(|(ex, rows)| GanItem {
                    real_source: SeqInput::Tokens(&ex.source),
                    real_response: SeqInput::Tokens(&ex.target),
                    fake_source: SeqInput::Tokens(&ex.source),
                    fake_response: SeqInput::Soft(rows),
                })
                .collect();
            gan_loss(&mut g, &disc, &dbp, &items)?.loss
        }
        "mle" => {
            let bp = gen.bind(&mut g, true)?;
            mle_loss(&mut g, &gen, &bp, &pairs)?
        }
        "soft_path" => {
            let bp = gen.bind(&mut g, true)?;
            let dbp = disc.bind(&mut g, false)?;
            let mut scores = Vec::new();
            for ex in &pairs {
                let z = random_noise(&mut rng, &dims);
                let soft = gen.decode_soft_graph(&mut g, &bp, &ex.source, &z, 0.5, dims.max_steps)?;
                scores.push(disc.score_graph(&mut g, &dbp, SeqInput::Tokens(&ex.source), SeqInput::Soft(&soft.rows))?);
            }
            let mean = g.mean_of(&scores)?;
            g.scale(mean, -1.0)?
        }
        other => return Err(Error::invalid(format!("unknown graph kind `{other}`"))),
    };
    Ok((g, loss))
}

/// Coordinates of a failed check, re-probed one by one.
#[derive(Default)]
struct Audit {
    over_tolerance: usize,
    /// Over tolerance and also in disagreement with a five-point stencil.
    unexplained: usize,
    max_abs_gradient: f64,
}

/// Central differences at ε = 1e-5 resolve a derivative only to about
/// `ulp(f) / ε`, so a coordinate whose true gradient is near that scale cannot
/// meet a relative tolerance whatever the analytic value. Each such coordinate
/// is re-measured with a five-point stencil at a step of 1e-3, whose rounding
/// error is a hundred times smaller, to separate resolution limits from
/// genuine disagreements.
fn audit(g: &mut Graph, loss: NodeId) -> Result<Audit> {
    const H: f64 = 1e-3;
    g.evaluate(loss, &Bindings::new())?;
    let analytic = g.backward_scalar(loss)?;
    let mut out = Audit::default();
    for (name, grad) in &analytic {
        let id = g.leaf_id(name).expect("gradient names come from leaves");
        let original = g.get(id).clone();
        for k in 0..original.len() {
            let mut probe = |delta: f64| -> Result<f64> {
                let mut v = original.clone();
                v.data_mut()[k] += delta;
                g.set_leaf_value(id, v);
                g.recompute(loss)?;
                Ok(g.get(loss).item())
            };
            let numeric = (probe(GRAD_EPSILON)? - probe(-GRAD_EPSILON)?) / (2.0 * GRAD_EPSILON);
            let a = grad.data()[k];
            if relative_error(a, numeric) > GRAD_TOLERANCE {
                out.over_tolerance += 1;
                out.max_abs_gradient = out.max_abs_gradient.max(a.abs());
                let stencil = (probe(-2.0 * H)? - 8.0 * probe(-H)? + 8.0 * probe(H)? - probe(2.0 * H)?) / (12.0 * H);
                if relative_error(a, stencil) > GRAD_TOLERANCE && (a - stencil).abs() > 1e-12 {
                    out.unexplained += 1;
                }
            }
        }
        g.set_leaf_value(id, original);
    }
    g.recompute(loss)?;
    Ok(out)
}

/// Every op kind and the GAN, MLE and soft-path loss graphs pass the
/// finite-difference check on 10 random instances each.
///
/// The pass flag is the plain check. Failing instances are audited so the
/// details say whether the offending coordinates are below finite-difference
/// resolution or genuinely wrong.
pub fn gradient_correctness(seed: u64) -> Result<CheckReport> {
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut failures = Vec::new();
    let (mut over, mut unexplained, mut largest): (usize, usize, f64) = (0, 0, 0.0);
    let mut run = |name: String, i: u64, g: &mut Graph, loss: NodeId| -> Result<()> {
        let r = grad_check(g, loss, &Bindings::new(), GRAD_EPSILON, GRAD_TOLERANCE)?;
        let e = worst.entry(name.clone()).or_insert(0.0);
        *e = e.max(r.max_rel_error);
        if !r.pass {
            failures.push(format!("{name}#{i}"));
            let a = audit(g, loss)?;
            over += a.over_tolerance;
            unexplained += a.unexplained;
            largest = largest.max(a.max_abs_gradient);
        }
        Ok(())
    };
    for kind in OP_KINDS {
        for i in 0..10 {
            let mut rng = stream(seed, &format!("check1/op/{kind}"), i);
            let (mut g, loss) = op_instance(kind, &mut rng, i as usize)?;
            run(kind.to_string(), i, &mut g, loss)?;
        }
    }
    for kind in ["gan", "mle", "soft_path"] {
        for i in 0..10 {
            let (mut g, loss) = model_instance(kind, seed, i)?;
            run(format!("graph/{kind}"), i, &mut g, loss)?;
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let mut summary = format!(
        "{} op kinds + 3 loss graphs x 10 instances, max rel err {max:.2e} (tol {GRAD_TOLERANCE:.0e})",
        OP_KINDS.len()
    );
    if !failures.is_empty() {
        summary.push_str(&format!(
            "; {} instances fail on {over} coords with |grad| <= {largest:.1e}, {unexplained} disputed by a five-point stencil",
            failures.len()
        ));
    }
    Ok(CheckReport::new(
        1,
        "gradient-correctness",
        failures.is_empty(),
        summary,
        json!({
            "epsilon": GRAD_EPSILON,
            "tolerance": GRAD_TOLERANCE,
            "max_rel_error": worst,
            "failures": failures,
            "coords_over_tolerance": over,
            "coords_disputed_by_stencil": unexplained,
            "max_abs_gradient_over_tolerance": largest,
        }),
    ))
}

// ---------------------------------------------------------------------------
// 2. soft-argmax limit

/// At τ = 0.01, softmax of logits whose top gap is at least 1 is within 1e-6
/// of the argmax one-hot, on 100 random vectors.
pub fn soft_argmax_limit(seed: u64) -> Result<CheckReport> {
    let mut rng = stream(seed, "check2", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let mut logits: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let top = rng.random_range(0..n);
        let rest = logits.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        logits[top] = rest + rng.random_range(1.0..3.0);
        let soft = softmax(&logits, 0.01);
        for (i, &p) in soft.iter().enumerate() {
            let target = if i == top { 1.0 } else { 0.0 };
            worst = worst.max((p - target).abs());
        }
    }
    Ok(CheckReport::new(
        2,
        "soft-argmax-limit",
        worst <= 1e-6,
        format!("100 vectors, gap >= 1, tau 0.01: max deviation from one-hot {worst:.2e}"),
        json!({ "max_deviation": worst, "tolerance": 1e-6 }),
    ))
}

// ---------------------------------------------------------------------------
// 3. variational bound

fn random_joint(rng: &mut Rng, rows: usize, cols: usize, sparse: bool) -> Result<JointTable> {
    let mut p: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if sparse && rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.01..1.0) })
                .collect()
        })
        .collect();
    if p.iter().flatten().all(|&v| v == 0.0) {
        p[0][0] = 1.0;
    }
    let total: f64 = p.iter().flatten().sum();
    for v in p.iter_mut().flatten() {
        *v /= total;
    }
    // Renormalizing can leave the sum a rounding step away from 1.
    let drift: f64 = p.iter().flatten().sum::<f64>() - 1.0;
    let (r, c) = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .max_by(|a, b| p[a.0][a.1].total_cmp(&p[b.0][b.1]))
        .expect("non-empty");
    p[r][c] -= drift;
    JointTable::new(p)
}

/// Random conditional `q[s][t]` with columns summing to 1.
fn random_conditional(rng: &mut Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; cols]; rows];
    for t in 0..cols {
        let raw: Vec<f64> = (0..rows).map(|_| rng.random_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        for s in 0..rows {
            q[s][t] = raw[s] / sum;
        }
    }
    q
}

/// `H(S) + E log q(S|T) ≤ I(S;T)` for random `q`, with equality at the posterior.
pub fn bound_tightness(seed: u64) -> Result<CheckReport> {
    let mut rng = stream(seed, "check3", 0);
    let (mut max_violation, mut max_gap_at_posterior, mut min_slack): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    for _ in 0..50 {
        let joint = random_joint(&mut rng, 4, 4, false)?;
        let mi = exact_mi(&joint);
        for _ in 0..20 {
            let q = random_conditional(&mut rng, 4, 4);
            let b = variational_bound(&joint, &q)?;
            max_violation = max_violation.max(b - mi);
            min_slack = min_slack.min(mi - b);
        }
        let post = exact_posterior(&joint)?;
        max_gap_at_posterior = max_gap_at_posterior.max((variational_bound(&joint, &post)? - mi).abs());
    }
    let passed = max_violation <= 1e-9 && max_gap_at_posterior < 1e-9;
    Ok(CheckReport::new(
        3,
        "variational-bound",
        passed,
        format!("50 joints x 20 q: max violation {max_violation:.2e}, gap at posterior {max_gap_at_posterior:.2e}"),
        json!({
            "max_violation": max_violation,
            "max_gap_at_posterior": max_gap_at_posterior,
            "min_slack_random_q": min_slack,
            "tolerance": 1e-9,
        }),
    ))
}

// ---------------------------------------------------------------------------
// 4. REINFORCE unbiasedness

/// A two-token vocabulary (id 0 doubles as pad and begin, id 1 ends) with
/// responses of at most two steps: `[1]`, `[0, 1]`, `[0, 0]`.
pub fn vocab2_dims() -> ModelDims {
    ModelDims {
        vocab_size: 2,
        max_steps: 2,
        pad_id: 0,
        begin_id: 0,
        end_id: 1,
        ..toy_dims(2)
    }
}

/// Monte Carlo score-function means over 10⁵ samples agree with the enumerated
/// gradient within 3 standard errors, with and without the batch-mean baseline.
/// The reward is `log q(S|T)` under a random backward model.
pub fn reinforce_unbiasedness(seed: u64) -> Result<CheckReport> {
    const N: usize = 100_000;
    let dims = vocab2_dims();
    let mut rng = stream(seed, "check4", 0);
    let mut policy = Generator::new(dims.clone(), "fwd", &mut rng);
    policy.params = scrambled(&policy.params, &mut rng);
    let mut proposal = Generator::new(dims.clone(), "bwd", &mut rng);
    proposal.params = scrambled(&proposal.params, &mut rng);
    let source = vec![0, 1, 0];
    let target = crate::objectives::with_end(&source, dims.end_id);
    let reward = |t: &[usize]| proposal.seq_logprob(&strip_end(t, dims.end_id), &target, None);

    let exact = exact_expected_gradient(&policy, &source, &reward, 0.0)?;
    let mean_reward = exact_expected_reward(&policy, &source, &reward)?;
    let exact_b = exact_expected_gradient(&policy, &source, &reward, mean_reward)?;
    let mut baseline_shift: f64 = 0.0;
    for (k, t) in &exact {
        for (a, b) in t.data().iter().zip(exact_b[k].data()) {
            baseline_shift = baseline_shift.max((a - b).abs());
        }
    }

    let mut runs = BTreeMap::new();
    let mut passed = baseline_shift <= 1e-10;
    for (label, with_baseline) in [("no_baseline", false), ("batch_baseline", true)] {
        let m = reinforce_moments(&policy, &source, &reward, N, seed, with_baseline)?;
        let se = m.std_error();
        let (mut worst_z, mut coords, mut outside): (f64, usize, usize) = (0.0, 0, 0);
        for (k, t) in &exact {
            for (i, &e) in t.data().iter().enumerate() {
                let (mean, s) = (m.mean[k].data()[i], se[k].data()[i]);
                coords += 1;
                let ok = if s == 0.0 { (mean - e).abs() <= 1e-12 } else { (mean - e).abs() <= 3.0 * s };
                if s > 0.0 {
                    worst_z = worst_z.max((mean - e).abs() / s);
                }
                if !ok {
                    outside += 1;
                }
            }
        }
        passed &= outside == 0;
        runs.insert(label, json!({ "coordinates": coords, "outside_3se": outside, "max_z": worst_z }));
    }
    let z = |k: &str| runs[k]["max_z"].as_f64().unwrap_or(f64::NAN);
    Ok(CheckReport::new(
        4,
        "reinforce-unbiasedness",
        passed,
        format!(
            "N = 1e5: max |z| {:.2} (no baseline), {:.2} (baseline); baseline shift {baseline_shift:.1e}",
            z("no_baseline"),
            z("batch_baseline")
        ),
        json!({ "samples": N, "runs": runs, "baseline_shift": baseline_shift, "expected_reward": mean_reward }),
    ))
}

// ---------------------------------------------------------------------------
// 5. variance reduction

/// The toy task for the variance probe: a vocabulary of 5 (one content token
/// besides the reserved ids), two decoding steps, default noise scale and
/// temperature.
pub fn variance_toy(seed: u64) -> ToyGan {
    let dims = ModelDims {
        max_steps: 2,
        ..toy_dims(5)
    };
    let mut rng = stream(seed, "check5", 0);
    let mut generator = Generator::new(dims.clone(), "fwd", &mut rng);
    generator.params = scrambled(&generator.params, &mut rng);
    let mut discriminator = Discriminator::new(dims, &mut rng);
    discriminator.params = scrambled(&discriminator.params, &mut rng);
    let defaults = crate::objectives::ObjectiveWeights::default();
    ToyGan {
        generator,
        discriminator,
        source: vec![4, 4, 2],
        sigma: defaults.sigma,
        tau: defaults.tau,
    }
}

/// Median per-coordinate variance ratio of the soft-path estimator over
/// REINFORCE on the discriminator reward, N = 10⁴ samples each.
pub fn variance_reduction(seed: u64) -> Result<CheckReport> {
    const N: usize = 10_000;
    let task = variance_toy(seed);
    let dpg = estimator_variance_probe(Estimator::Dpg, &task, N, seed)?;
    let reinforce = estimator_variance_probe(Estimator::Reinforce, &task, N, seed)?;
    let ratios = variance_ratios(&dpg, &reinforce);
    let med = median(&ratios).ok_or(Error::Empty("variance ratios"))?;
    Ok(CheckReport::new(
        5,
        "variance-reduction",
        med < 1.0,
        format!("median var ratio soft-path / REINFORCE = {med:.3e} over {} coords", ratios.len()),
        json!({ "samples": N, "median_ratio": med, "ratios": ratios }),
    ))
}

// ---------------------------------------------------------------------------
// 6. metric closed forms

fn two_token_corpus(a: usize, b: usize) -> Vec<Vec<String>> {
    let tokens: Vec<String> = std::iter::repeat_n("a", a).chain(std::iter::repeat_n("b", b)).map(String::from).collect();
    tokens.chunks(10).map(|c| c.to_vec()).collect()
}

/// Dist-1 and Ent-1 on two 100-token corpora with the same two types, counted
/// 50/50 and 1/99.
pub fn metric_closed_forms() -> Result<CheckReport> {
    let even = two_token_corpus(50, 50);
    let skew = two_token_corpus(1, 99);
    let (d_even, d_skew) = (dist_n(&even, 1)?, dist_n(&skew, 1)?);
    let (e_even, e_skew) = (ent_n(&even, 1)?, ent_n(&skew, 1)?);
    let skew_direct = -(0.01f64 * 0.01f64.ln() + 0.99 * 0.99f64.ln());
    let checks = [
        ("dist1_is_0.02", (d_even - 0.02).abs() < 1e-15),
        ("dist1_equal", d_even == d_skew),
        ("ent1_even_is_ln2", (e_even - 2f64.ln()).abs() < 1e-12),
        ("ent1_skew_is_0.05600", (e_skew - 0.05600).abs() < 5e-6 && (e_skew - skew_direct).abs() < 1e-12),
        ("ent1_even_exceeds_skew", e_even > e_skew),
    ];
    let passed = checks.iter().all(|c| c.1);
    Ok(CheckReport::new(
        6,
        "metric-closed-forms",
        passed,
        format!("Dist-1 {d_even} / {d_skew}, Ent-1 {e_even:.5} / {e_skew:.5}"),
        json!({
            "dist_1": { "even": d_even, "skew": d_skew },
            "ent_1": { "even": e_even, "skew": e_skew },
            "checks": checks.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        }),
    ))
}

// ---------------------------------------------------------------------------
// 7. entropy decomposition

/// `I(S;T) = H(T) − H(T|S)` on 50 random joints of assorted shapes, some sparse.
pub fn entropy_identity(seed: u64) -> Result<CheckReport> {
    let mut rng = stream(seed, "check7", 0);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (r, c) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let joint = random_joint(&mut rng, r, c, i % 2 == 1)?;
        let lhs = exact_mi(&joint);
        let rhs = entropy(joint.marginal_t()) - conditional_entropy(&joint);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(CheckReport::new(
        7,
        "entropy-decomposition",
        worst <= 1e-10,
        format!("50 joints: max |I - (H(T) - H(T|S))| = {worst:.2e}"),
        json!({ "max_abs_error": worst, "tolerance": 1e-10 }),
    ))
}

// ---------------------------------------------------------------------------
// 8 and 9. desk-scale experiments on the bland-trap task

/// Seed of the synthetic corpus used by the desk experiments.
pub const DESK_DATA_SEED: u64 = 1;
/// Training seeds averaged by the directional experiment.
pub const DESK_SEEDS: usize = 3;

/// The desk protocol on the default bland-trap task: one-layer encoders, inputs
/// of at most 4 tokens, 1000 pretraining steps at batch 16 and equal adversarial
/// budgets of 1000 steps.
pub fn desk_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        batch_size: 16,
        pretrain_epochs: 10,
        pretrain_lr: 0.01,
        adversarial_steps: 1000,
        gen_lr: 1e-3,
        disc_lr: 1e-3,
        synthetic_pairs: 2000,
        model: ModelDims {
            embed_dim: 16,
            hidden_dim: 32,
            disc_dim: 16,
            conv_channels: 16,
            conv_layers: 1,
            filter_width: 3,
            stride: 1,
            max_len: 4,
            max_steps: 5,
            init_scale: 0.3,
            ..ModelDims::default()
        },
        task: TaskSpec::default(),
        ..TrainConfig::default()
    };
    cfg.objective.mle_weight = 0.01;
    cfg
}

/// Task and id-encoded splits for a config's synthetic task.
pub fn desk_data(cfg: &TrainConfig) -> Result<(SyntheticTask, PreparedData)> {
    let task = cfg.task.build()?;
    let ds = generate_synthetic(&task, cfg.synthetic_pairs, DESK_DATA_SEED)?;
    let vocab = build_vocab(&ds, cfg.model.vocab_size)?;
    let data = prepare_data(&ds, vocab, &cfg.model)?;
    Ok((task, data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Objective,
    pub seed: u64,
    pub ent_4: f64,
    pub dist_2: f64,
    pub specificity: f64,
    pub checkpoint_sha256: String,
    pub warnings: Vec<String>,
}

const MODES: [Objective; 4] = [Objective::Seq2seq, Objective::Cgan, Objective::Aim, Objective::Daim];

fn mode_result(mode: Objective, seed: u64, ck: &Checkpoint, report: &MetricsReport, warnings: Vec<String>) -> Result<ModeResult> {
    Ok(ModeResult {
        mode,
        seed,
        ent_4: report.ent_4.unwrap_or(0.0),
        dist_2: report.dist_2.unwrap_or(0.0),
        specificity: report.source_specificity.unwrap_or(0.0),
        checkpoint_sha256: sha256_hex(&ck.to_bytes()?),
        warnings,
    })
}

/// Trains every mode from a shared pretrained checkpoint and evaluates it on the
/// test split. `progress` receives one line per finished run.
pub fn run_desk_seed(seed: u64, progress: &mut dyn FnMut(&str)) -> Result<Vec<ModeResult>> {
    let base = desk_config(seed);
    let (task, data) = desk_data(&base)?;
    let pre = pretrain(&base, &data, None, None)?;
    let metrics = MetricsConfig::default().without_embeddings();
    let mut out = Vec::new();
    for mode in MODES {
        let cfg = TrainConfig { mode, ..base.clone() };
        let run = train_adversarial(&cfg, &data, Some(pre.checkpoint.clone()), None)?;
        let ev = evaluate_model(&run.checkpoint, &data.test, &metrics, None, &DecodeConfig::default(), Some(&task))?;
        let r = mode_result(mode, seed, &run.checkpoint, &ev.report, run.warnings)?;
        progress(&format!(
            "seed {seed} {:<7} ent4 {:.4} dist2 {:.4} specificity {:.3}",
            mode.name(),
            r.ent_4,
            r.dist_2,
            r.specificity
        ));
        out.push(r);
    }
    Ok(out)
}

/// Seed-averaged metric per mode.
pub fn mode_means(results: &[ModeResult]) -> BTreeMap<String, [f64; 3]> {
    let mut sums: BTreeMap<String, ([f64; 3], usize)> = BTreeMap::new();
    for r in results {
        let e = sums.entry(r.mode.name().to_string()).or_insert(([0.0; 3], 0));
        e.0[0] += r.ent_4;
        e.0[1] += r.dist_2;
        e.0[2] += r.specificity;
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s.map(|v| v / n as f64))).collect()
}

/// The orderings checked on the seed means, as `(description, holds)`.
pub fn ordering_checks(means: &BTreeMap<String, [f64; 3]>) -> Vec<(String, bool)> {
    let get = |m: &str, i: usize| means.get(m).map_or(f64::NAN, |v| v[i]);
    let mut out = Vec::new();
    for (i, metric) in ["ent_4", "dist_2", "specificity"].iter().enumerate() {
        out.push((format!("{metric}: daim >= aim"), get("daim", i) >= get("aim", i)));
        out.push((format!("{metric}: aim > seq2seq"), get("aim", i) > get("seq2seq", i)));
        out.push((format!("{metric}: cgan > seq2seq"), get("cgan", i) > get("seq2seq", i)));
    }
    out.push(("specificity: aim > cgan".into(), get("aim", 2) > get("cgan", 2)));
    out
}

pub fn directional_from_results(results: Vec<ModeResult>) -> CheckReport {
    let means = mode_means(&results);
    let checks = ordering_checks(&means);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let fmt = |m: &str| means.get(m).map_or("-".into(), |v| format!("{m} {:.3}/{:.4}/{:.3}", v[0], v[1], v[2]));
    let mut summary = format!(
        "ent4/dist2/spec means: {}, {}, {}, {}",
        fmt("seq2seq"),
        fmt("cgan"),
        fmt("aim"),
        fmt("daim")
    );
    if !failed.is_empty() {
        summary.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    CheckReport::new(
        8,
        "directional-ordering",
        failed.is_empty(),
        summary,
        json!({
            "data_seed": DESK_DATA_SEED,
            "config": desk_config(0).to_toml(),
            "runs": results,
            "means": means,
            "checks": checks.iter().map(|(k, v)| (k.clone(), *v)).collect::<BTreeMap<_, _>>(),
        }),
    )
}

/// Seq2seq, cGAN, AIM and DAIM on the bland-trap task with equal budgets;
/// orderings of seed-averaged Ent-4, Dist-2 and source specificity.
pub fn directional_ordering(seed: u64) -> Result<CheckReport> {
    directional_ordering_with(seed, &mut |_| {})
}

pub fn directional_ordering_with(seed: u64, progress: &mut dyn FnMut(&str)) -> Result<CheckReport> {
    let mut results = Vec::new();
    for k in 0..DESK_SEEDS as u64 {
        results.extend(run_desk_seed(seed + k, progress)?);
    }
    Ok(directional_from_results(results))
}

/// On the pretrained seq2seq model: weight 0 reproduces the beam's top
/// hypothesis on every test source, and weight 0.5 raises source specificity.
pub fn mmi_sanity(seed: u64) -> Result<CheckReport> {
    let cfg = desk_config(seed);
    let (task, data) = desk_data(&cfg)?;
    let pre = pretrain(&cfg, &data, None, None)?;
    let ck = &pre.checkpoint;
    let (fwd, bwd) = (&ck.forward, &ck.backward);
    let mut mismatches = 0;
    let mut picks: BTreeMap<String, Vec<(Vec<String>, Vec<String>)>> = BTreeMap::new();
    for ex in &data.test {
        let cands = candidates(fwd, bwd, &ex.source, cfg.beam_width)?;
        let beam = fwd.beam_search(&ex.source, cfg.beam_width)?;
        let top = strip_end(&beam[0].tokens, fwd.dims.end_id);
        let zero = pick(&cands, 0.0)?;
        if zero.tokens != top {
            mismatches += 1;
        }
        let src = ck.vocab.decode(&ex.source);
        for (w, r) in [("0.0", zero), ("0.5", pick(&cands, 0.5)?)] {
            picks.entry(w.to_string()).or_default().push((src.clone(), ck.vocab.decode(&r.tokens)));
        }
    }
    let spec0 = task.specificity(&picks["0.0"])?;
    let spec5 = task.specificity(&picks["0.5"])?;
    let passed = mismatches == 0 && spec5 > spec0;
    Ok(CheckReport::new(
        9,
        "mmi-bidi-sanity",
        passed,
        format!(
            "w=0 matches beam top-1 on {}/{} sources; specificity {spec0:.3} (w=0) -> {spec5:.3} (w=0.5)",
            data.test.len() - mismatches,
            data.test.len()
        ),
        json!({
            "beam_width": cfg.beam_width,
            "test_sources": data.test.len(),
            "top1_mismatches": mismatches,
            "specificity": { "w0": spec0, "w0.5": spec5 },
            "checkpoint_sha256": sha256_hex(&ck.to_bytes()?),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_kind_has_an_instance() {
        let mut rng = stream(0, "t", 0);
        for kind in OP_KINDS {
            let (g, loss) = op_instance(kind, &mut rng, 0).unwrap();
            assert_eq!(g.shape(loss), [1], "{kind}");
        }
        assert!(op_instance("nope", &mut rng, 0).is_err());
    }

    #[test]
    fn random_joints_are_valid_and_sparse_ones_have_zeros() {
        let mut rng = stream(1, "t", 0);
        for _ in 0..20 {
            let j = random_joint(&mut rng, 3, 5, true).unwrap();
            assert_eq!((j.rows(), j.cols()), (3, 5));
        }
        let q = random_conditional(&mut rng, 3, 2);
        for t in 0..2 {
            let s: f64 = q.iter().map(|r| r[t]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ordering_checks_read_the_means() {
        let means: BTreeMap<String, [f64; 3]> = [
            ("seq2seq", [0.0, 0.0, 0.0]),
            ("cgan", [1.0, 0.1, 0.2]),
            ("aim", [2.0, 0.2, 0.9]),
            ("daim", [2.0, 0.3, 0.8]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let checks = ordering_checks(&means);
        assert_eq!(checks.len(), 10);
        let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        assert_eq!(failed, ["specificity: daim >= aim"]);
    }

    #[test]
    fn fast_checks_pass() {
        for id in [2, 3, 6, 7] {
            let r = run_check(id, 0).unwrap();
            assert!(r.passed, "{}", r.line());
        }
        assert!(run_check(10, 0).is_err());
    }

    #[test]
    fn desk_config_is_valid() {
        let cfg = desk_config(4);
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
