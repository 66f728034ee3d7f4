//! Brute-force ground truth: exact mutual information and posteriors of finite
//! joints, enumerated expected gradients, and Monte Carlo estimator probes.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{accumulate, Grads, Graph, Tensor};
use crate::error::{Error, Result};
use crate::seqmodels::{Discriminator, Generator, SeqInput};

/// Largest response space `|V|^max_steps` the enumerating oracles accept.
pub const ENUMERATION_BOUND: u128 = 10_000;

/// Finite joint `p(s, t)` stored row-per-source, with cached marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    p: Vec<Vec<f64>>,
    ps: Vec<f64>,
    pt: Vec<f64>,
}

impl JointTable {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let cols = p.first().map_or(0, Vec::len);
        if p.is_empty() || cols == 0 {
            return Err(Error::InvalidTable("empty table".into()));
        }
        if p.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTable("rows differ in length".into()));
        }
        if p.iter().flatten().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidTable("entries must be finite and nonnegative".into()));
        }
        let total: f64 = p.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTable(format!("entries sum to {total}")));
        }
        let ps = p.iter().map(|r| r.iter().sum()).collect();
        let pt = (0..cols).map(|t| p.iter().map(|r| r[t]).sum()).collect();
        Ok(JointTable { p, ps, pt })
    }

    /// Independent joint `p(s)·p(t)`.
    pub fn product(ps: &[f64], pt: &[f64]) -> Result<Self> {
        JointTable::new(ps.iter().map(|&a| pt.iter().map(|&b| a * b).collect()).collect())
    }

    pub fn rows(&self) -> usize {
        self.p.len()
    }

    pub fn cols(&self) -> usize {
        self.pt.len()
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.p[s][t]
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn marginal_s(&self) -> &[f64] {
        &self.ps
    }

    pub fn marginal_t(&self) -> &[f64] {
        &self.pt
    }

    pub fn transpose(&self) -> JointTable {
        let p = (0..self.cols()).map(|t| self.p.iter().map(|r| r[t]).collect()).collect();
        JointTable {
            p,
            ps: self.pt.clone(),
            pt: self.ps.clone(),
        }
    }
}

/// Shannon entropy in nats with `0·log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn exact_mi(joint: &JointTable) -> f64 {
    let mut mi = 0.0;
    for (s, row) in joint.p.iter().enumerate() {
        for (t, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (joint.ps[s] * joint.pt[t])).ln();
            }
        }
    }
    mi
}

/// `H(T|S) = −Σ p(s,t) log p(t|s)`.
pub fn conditional_entropy(joint: &JointTable) -> f64 {
    let mut h = 0.0;
    for (s, row) in joint.p.iter().enumerate() {
        for &p in row {
            if p > 0.0 {
                h -= p * (p / joint.ps[s]).ln();
            }
        }
    }
    h
}

/// `p(s|t)` laid out like the joint (`q[s][t]`); every column sums to 1.
pub fn exact_posterior(joint: &JointTable) -> Result<Vec<Vec<f64>>> {
    if let Some(t) = joint.pt.iter().position(|&m| m <= 0.0) {
        return Err(Error::InvalidTable(format!("target column {t} has zero marginal")));
    }
    Ok(joint
        .p
        .iter()
        .map(|row| row.iter().zip(&joint.pt).map(|(&p, &m)| p / m).collect())
        .collect())
}

/// `H(S) + Σ p(s,t) log q(s|t)` for a conditional `q[s][t]`.
pub fn variational_bound(joint: &JointTable, q: &[Vec<f64>]) -> Result<f64> {
    if q.len() != joint.rows() || q.iter().any(|r| r.len() != joint.cols()) {
        return Err(Error::shape("variational_bound", "q must match the joint's layout"));
    }
    let mut cross = 0.0;
    for (row_p, row_q) in joint.p.iter().zip(q) {
        for (&p, &qv) in row_p.iter().zip(row_q) {
            if p > 0.0 {
                cross += p * qv.ln();
            }
        }
    }
    Ok(entropy(&joint.ps) + cross)
}

/// Every response the generator can emit: sequences ending in the end token, or
/// reaching `max_steps` without it.
pub fn response_space(generator: &Generator) -> Result<Vec<Vec<usize>>> {
    let dims = &generator.dims;
    let size = (dims.vocab_size as u128)
        .checked_pow(dims.max_steps as u32)
        .unwrap_or(u128::MAX);
    if size > ENUMERATION_BOUND {
        return Err(Error::EnumerationBound {
            size,
            bound: ENUMERATION_BOUND,
        });
    }
    let mut out = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        for tok in (0..dims.vocab_size).rev() {
            let mut seq: Vec<usize> = prefix.clone();
            seq.push(tok);
            if tok == dims.end_id || seq.len() == dims.max_steps {
                out.push(seq);
            } else {
                stack.push(seq);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn logprob_grad(generator: &Generator, source: &[usize], target: &[usize]) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let bp = generator.bind(&mut g, true)?;
    let lp = generator.seq_logprob_graph(&mut g, &bp, source, target, None)?;
    Ok((g.get(lp).item(), g.backward_scalar(lp)?))
}

/// `Σ_T p(T|S)·(r(T) − b)·∇ log p(T|S)` by full enumeration of the response space.
pub fn exact_expected_gradient(
    generator: &Generator,
    source: &[usize],
    reward: &dyn Fn(&[usize]) -> Result<f64>,
    baseline: f64,
) -> Result<Grads> {
    let mut total = zero_grads(generator);
    for seq in response_space(generator)? {
        let (lp, grad) = logprob_grad(generator, source, &seq)?;
        accumulate(&mut total, &grad, lp.exp() * (reward(&seq)? - baseline));
    }
    Ok(total)
}

/// `Σ_T p(T|S)·r(T)` by enumeration.
pub fn exact_expected_reward(generator: &Generator, source: &[usize], reward: &dyn Fn(&[usize]) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for seq in response_space(generator)? {
        total += generator.seq_logprob(source, &seq, None)?.exp() * reward(&seq)?;
    }
    Ok(total)
}

fn zero_grads(generator: &Generator) -> Grads {
    generator
        .params
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
        .collect()
}

/// Per-coordinate sample mean and (unbiased) variance of a gradient estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub samples: usize,
    pub mean: Grads,
    pub variance: Grads,
}

impl Moments {
    /// Standard error of the mean for each coordinate.
    pub fn std_error(&self) -> Grads {
        let n = self.samples as f64;
        self.variance
            .iter()
            .map(|(k, v)| (k.clone(), v.map(|x| (x / n).sqrt())))
            .collect()
    }
}

/// Two-pass moments over a fixed list of sample gradients.
fn moments(samples: &[Grads], template: &Grads) -> Moments {
    let n = samples.len() as f64;
    let mut mean: Grads = template.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
    for s in samples {
        accumulate(&mut mean, s, 1.0 / n);
    }
    let mut variance: Grads = template.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
    for s in samples {
        for (k, acc) in variance.iter_mut() {
            let m = mean[k].data();
            let x = s.get(k).map(Tensor::data);
            for (i, a) in acc.data_mut().iter_mut().enumerate() {
                let d = x.map_or(0.0, |x| x[i]) - m[i];
                *a += d * d / (n - 1.0);
            }
        }
    }
    Moments {
        samples: samples.len(),
        mean,
        variance,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Reinforce,
    Dpg,
}

/// A generator, a discriminator whose score is the reward, and one fixed source.
#[derive(Clone, Debug)]
pub struct ToyGan {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub source: Vec<usize>,
    /// Standard deviation of Z on the soft path.
    pub sigma: f64,
    pub tau: f64,
}

impl ToyGan {
    pub fn reward(&self, response: &[usize]) -> Result<f64> {
        self.discriminator.discriminate(&self.source, response)
    }
}

/// Score-function samples `(r_i − b)·∇ log p(T_i|S)` with `T_i` drawn at τ = 1.
/// With `batch_baseline`, `b` is the mean reward of all `n` draws; otherwise 0.
pub fn reinforce_moments(
    generator: &Generator,
    source: &[usize],
    reward: &dyn Fn(&[usize]) -> Result<f64>,
    n: usize,
    seed: u64,
    batch_baseline: bool,
) -> Result<Moments> {
    if n < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let mut rng = crate::rng::stream(seed, "probe/reinforce", 0);
    let mut draws = Vec::with_capacity(n);
    let mut cache: BTreeMap<Vec<usize>, (f64, Grads)> = BTreeMap::new();
    for _ in 0..n {
        let (seq, _) = generator.sample_response(source, &mut rng)?;
        if !cache.contains_key(&seq) {
            let r = reward(&seq)?;
            let (_, grad) = logprob_grad(generator, source, &seq)?;
            cache.insert(seq.clone(), (r, grad));
        }
        draws.push(seq);
    }
    let baseline = if batch_baseline {
        draws.iter().map(|s| cache[s].0).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let samples: Vec<Grads> = draws
        .iter()
        .map(|s| {
            let (r, grad) = &cache[s];
            let mut out = Grads::new();
            accumulate(&mut out, grad, r - baseline);
            out
        })
        .collect();
    Ok(moments(&samples, &zero_grads(generator)))
}

/// Soft-path samples `∇_θ D(soft_decode(S, Z_i), S)` with `Z_i ~ N(0, σ²I)`.
pub fn dpg_moments(task: &ToyGan, n: usize, seed: u64) -> Result<Moments> {
    if n < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let normal = Normal::new(0.0, task.sigma).map_err(|e| Error::invalid(format!("sigma: {e}")))?;
    let mut rng = crate::rng::stream(seed, "probe/dpg", 0);
    let gen = &task.generator;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..gen.dims.hidden_dim).map(|_| normal.sample(&mut rng)).collect();
        let mut g = Graph::new();
        let bp = gen.bind(&mut g, true)?;
        let dbp = task.discriminator.bind(&mut g, false)?;
        let soft = gen.decode_soft_graph(&mut g, &bp, &task.source, &z, task.tau, gen.dims.max_steps)?;
        let d = task.discriminator.score_graph(
            &mut g,
            &dbp,
            SeqInput::Tokens(&task.source),
            SeqInput::Soft(&soft.rows),
        )?;
        samples.push(gen.params.restrict(&g.backward_scalar(d)?));
    }
    Ok(moments(&samples, &zero_grads(gen)))
}

/// Gradient moments of one estimator of `∇ E[D]` on the toy task. REINFORCE uses
/// the batch-mean baseline.
pub fn estimator_variance_probe(estimator: Estimator, task: &ToyGan, n: usize, seed: u64) -> Result<Moments> {
    if n < 1000 {
        return Err(Error::invalid(format!("variance probe needs at least 1000 samples, got {n}")));
    }
    match estimator {
        Estimator::Reinforce => reinforce_moments(&task.generator, &task.source, &|t| task.reward(t), n, seed, true),
        Estimator::Dpg => dpg_moments(task, n, seed),
    }
}

/// Per-coordinate `var(numerator) / var(denominator)`, skipping coordinates where
/// both variances are zero. Sorted ascending.
pub fn variance_ratios(numerator: &Moments, denominator: &Moments) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, v_num) in &numerator.variance {
        let Some(v_den) = denominator.variance.get(k) else { continue };
        for (&a, &b) in v_num.data().iter().zip(v_den.data()) {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            out.push(if b == 0.0 { f64::INFINITY } else { a / b });
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Median of a sorted slice.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}
