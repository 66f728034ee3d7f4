use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Phase};
use super::{PreparedData, TrainConfig};
use crate::error::{Error, Result};
use crate::objectives::{discriminator_update, generator_update, with_end, Example, Models, Objective, TermRngs};
use crate::params::{Adam, AdamConfig};
use crate::rng::stream;
use crate::seqmodels::Generator;

/// Scalars recorded after each update step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub phase: Phase,
    pub step: u64,
    pub epoch: u64,
    /// Mean training NLL summed over the directions being trained.
    pub mle: f64,
    /// Generator-side GAN value.
    pub gan: Option<f64>,
    pub disc_loss: Option<f64>,
    /// Forward MI lower-bound estimate.
    pub mi: Option<f64>,
    /// Generator objective being ascended.
    pub objective: Option<f64>,
    /// Fraction of scored pairs that hit the atanh clamp.
    pub clamp_rate: Option<f64>,
    /// Validation NLL, at epoch ends during pretraining.
    pub valid_mle: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<StepLog>,
    pub warnings: Vec<String>,
}

fn batches_per_epoch(n: usize, batch: usize) -> usize {
    (n / batch).max(1)
}

/// Batch `step` of an epoch-wise shuffle; the remainder of each epoch is dropped.
fn batch_at(data: &[Example], batch: usize, seed: u64, purpose: &str, step: u64) -> Vec<Example> {
    let bpe = batches_per_epoch(data.len(), batch) as u64;
    let (epoch, k) = (step / bpe, (step % bpe) as usize);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream(seed, purpose, epoch));
    let end = ((k + 1) * batch).min(data.len());
    order[k * batch..end].iter().map(|&i| data[i].clone()).collect()
}

fn mean_nll(gen: &Generator, examples: &[Example]) -> Result<f64> {
    let end = gen.dims.end_id;
    let mut total = 0.0;
    for ex in examples {
        total -= gen.seq_logprob(&ex.source, &with_end(&ex.target, end), None)?;
    }
    Ok(total / examples.len() as f64)
}

fn finite(step: u64, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("{what} is {v}"),
        })
    }
}

/// Non-finite values caught inside the graph surface as divergence too.
fn diverged(step: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { node, op } => Error::Diverged {
            step,
            detail: format!("non-finite value at node {node} ({op})"),
        },
        other => other,
    }
}

fn adam(lr: f64) -> Adam {
    Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    })
}

fn require_train(data: &PreparedData) -> Result<()> {
    if data.train.is_empty() {
        Err(Error::Empty("train split"))
    } else {
        Ok(())
    }
}

/// MLE pretraining of both directions: the forward model on `(S, T)` and the
/// backward model on `(T, S)`, with independent optimizers.
///
/// `resume` continues a pretraining checkpoint; `stop_after` ends the run early
/// at that global step (the checkpoint can be resumed later).
pub fn pretrain(config: &TrainConfig, data: &PreparedData, resume: Option<Checkpoint>, stop_after: Option<u64>) -> Result<RunOutcome> {
    config.validate()?;
    require_train(data)?;
    let mut ck = match resume {
        Some(c) if c.phase == Phase::Pretrain || c.phase == Phase::Init => c,
        Some(c) => return Err(Error::invalid(format!("cannot resume pretraining from a {:?} checkpoint", c.phase))),
        None => Checkpoint::init(config, data.vocab.clone(), super::resolved_dims(config, &data.vocab)),
    };
    ck.phase = Phase::Pretrain;
    let bpe = batches_per_epoch(data.train.len(), config.batch_size) as u64;
    let total = config.pretrain_epochs as u64 * bpe;
    let end = stop_after.map_or(total, |s| s.min(total));
    let valid_swapped: Vec<Example> = data.valid.iter().map(Example::swapped).collect();
    let mut logs = Vec::new();

    while ck.step < end {
        let step = ck.step;
        let batch = batch_at(&data.train, config.batch_size, config.seed, "pretrain/shuffle", step);
        let swapped: Vec<Example> = batch.iter().map(Example::swapped).collect();
        let (lf, gf) = crate::objectives::mle_grads(&ck.forward, &batch).map_err(diverged(step))?;
        let (lb, gb) = crate::objectives::mle_grads(&ck.backward, &swapped).map_err(diverged(step))?;
        let mle = finite(step, "training MLE", lf + lb)?;
        ck.opt_forward.update(&mut ck.forward.params, &gf)?;
        ck.opt_backward.update(&mut ck.backward.params, &gb)?;
        ck.step += 1;

        let epoch_end = ck.step % bpe == 0;
        let valid_mle = if epoch_end && !data.valid.is_empty() {
            let v = mean_nll(&ck.forward, &data.valid).map_err(diverged(step))?
                + mean_nll(&ck.backward, &valid_swapped).map_err(diverged(step))?;
            let v = finite(step, "validation MLE", v)?;
            log::info!("pretrain epoch {} validation NLL {v:.4}", ck.step / bpe);
            Some(v)
        } else {
            None
        };
        logs.push(StepLog {
            phase: Phase::Pretrain,
            step,
            epoch: step / bpe,
            mle,
            gan: None,
            disc_loss: None,
            mi: None,
            objective: None,
            clamp_rate: None,
            valid_mle,
        });
    }
    Ok(RunOutcome {
        checkpoint: ck,
        logs,
        warnings: Vec::new(),
    })
}

/// Adversarial phase for `config.mode`. Each step makes `disc_steps`
/// discriminator updates followed by `gen_steps` generator updates on the same
/// batch (generator updates start after `disc_warmup` steps). Under seq2seq the
/// step is plain MLE on both directions, so equal budgets compare like with like.
///
/// `start` is a pretraining checkpoint (or an adversarial one to resume). Without
/// one the models are freshly initialized and the checkpoint is flagged cold.
pub fn train_adversarial(
    config: &TrainConfig,
    data: &PreparedData,
    start: Option<Checkpoint>,
    stop_after: Option<u64>,
) -> Result<RunOutcome> {
    config.validate()?;
    require_train(data)?;
    let mut warnings = Vec::new();
    let mut ck = match start {
        Some(c) if c.phase == Phase::Adversarial => c,
        other => {
            let mut c = match other {
                Some(c) => c,
                None => Checkpoint::init(config, data.vocab.clone(), super::resolved_dims(config, &data.vocab)),
            };
            if c.phase == Phase::Init {
                c.cold_start = true;
                warnings.push("adversarial training started without pretrained weights (cold start)".to_string());
            }
            if c.vocab != data.vocab {
                return Err(Error::invalid("checkpoint vocabulary differs from the data vocabulary"));
            }
            c.phase = Phase::Adversarial;
            c.step = 0;
            c.config = config.clone();
            c.opt_forward = adam(config.gen_lr);
            c.opt_backward = adam(config.gen_lr);
            c.opt_disc = adam(config.disc_lr);
            c
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }

    let mode = config.mode;
    let w = &config.objective;
    let bpe = batches_per_epoch(data.train.len(), config.batch_size) as u64;
    let total = config.adversarial_steps as u64;
    let end = stop_after.map_or(total, |s| s.min(total));
    let (mut disc_batches, mut clamped_batches) = (0usize, 0usize);
    let mut logs = Vec::new();

    while ck.step < end {
        let step = ck.step;
        let batch = batch_at(&data.train, config.batch_size, config.seed, "adversarial/shuffle", step);
        let mut disc_loss = None;
        let (mut clamped, mut scored) = (0usize, 0usize);

        if mode.adversarial() {
            for k in 0..config.disc_steps {
                let models = Models {
                    forward: &ck.forward,
                    backward: &ck.backward,
                    disc: &ck.disc,
                };
                let mut rngs = TermRngs::for_step(config.seed, &format!("disc{k}"), step);
                let du = discriminator_update(mode, models, &batch, w, &mut rngs).map_err(diverged(step))?;
                disc_loss = Some(finite(step, "discriminator loss", du.loss)?);
                ck.opt_disc.update(&mut ck.disc.params, &du.grads)?;
                disc_batches += 1;
                clamped_batches += usize::from(du.clamped > 0);
                clamped += du.clamped;
                scored += du.pairs;
            }
        }

        let mut bundle = None;
        if mode == Objective::Seq2seq || step >= config.disc_warmup as u64 {
            for k in 0..config.gen_steps {
                let models = Models {
                    forward: &ck.forward,
                    backward: &ck.backward,
                    disc: &ck.disc,
                };
                let mut rngs = TermRngs::for_step(config.seed, &format!("gen{k}"), step);
                let gu = generator_update(mode, models, &batch, w, &mut rngs).map_err(diverged(step))?;
                finite(step, "generator objective", gu.bundle.total())?;
                let gf = ck.forward.params.restrict(&gu.grads);
                let gb = ck.backward.params.restrict(&gu.grads);
                ck.opt_forward.update(&mut ck.forward.params, &gf)?;
                if !gb.is_empty() {
                    ck.opt_backward.update(&mut ck.backward.params, &gb)?;
                }
                clamped += gu.clamped;
                scored += gu.pairs;
                bundle = Some(gu.bundle);
            }
        }
        ck.step += 1;

        let mle = match &bundle {
            Some(b) => -b.mle_aux,
            None => mean_nll(&ck.forward, &batch)?,
        };
        logs.push(StepLog {
            phase: Phase::Adversarial,
            step,
            epoch: step / bpe,
            mle,
            gan: bundle.as_ref().filter(|_| mode.adversarial()).map(|b| b.gan_forward),
            disc_loss,
            mi: bundle.as_ref().and_then(|b| b.mi_forward),
            objective: bundle.as_ref().filter(|_| mode.adversarial()).map(|b| b.total()),
            clamp_rate: (scored > 0).then(|| clamped as f64 / scored as f64),
            valid_mle: None,
        });
    }

    if disc_batches > 0 && 2 * clamped_batches > disc_batches {
        let msg = format!(
            "discriminator saturated: {clamped_batches} of {disc_batches} batches hit the atanh clamp"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(RunOutcome {
        checkpoint: ck,
        logs,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Dataset, Pair};
    use crate::seqmodels::ModelDims;
    use crate::trainer::prepare_data;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 3,
            batch_size: 4,
            pretrain_epochs: 30,
            pretrain_lr: 0.02,
            adversarial_steps: 3,
            model: ModelDims {
                embed_dim: 8,
                hidden_dim: 12,
                disc_dim: 8,
                conv_channels: 8,
                conv_layers: 1,
                filter_width: 2,
                stride: 1,
                max_len: 4,
                max_steps: 5,
                ..ModelDims::default()
            },
            ..TrainConfig::default()
        }
    }

    fn memorizable() -> Dataset {
        Dataset::train_only(vec![
            Pair::new("hi there", "hello friend"),
            Pair::new("how are you", "fine thanks"),
            Pair::new("bye", "see you"),
            Pair::new("what now", "nothing much"),
        ])
    }

    fn prepared(ds: &Dataset) -> PreparedData {
        let cfg = tiny_config();
        let vocab = build_vocab(ds, 64).unwrap();
        prepare_data(ds, vocab, &cfg.model).unwrap()
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let data: Vec<Example> = (0..10)
            .map(|i| Example {
                source: vec![i],
                target: vec![i],
            })
            .collect();
        let mut seen: Vec<usize> = (0..3).flat_map(|s| batch_at(&data, 3, 1, "p", s)).map(|e| e.source[0]).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert_ne!(batch_at(&data, 3, 1, "p", 0), batch_at(&data, 3, 1, "p", 3));
    }

    #[test]
    fn memorizes_four_pairs() {
        let ds = memorizable();
        let data = prepared(&ds);
        let mut cfg = tiny_config();
        cfg.pretrain_epochs = 500;
        let out = pretrain(&cfg, &data, None, None).unwrap();
        assert!(out.logs.len() <= 500);
        let fwd = out.logs.last().unwrap().mle;
        assert!(fwd < 0.1, "final training NLL {fwd}");
    }

    #[test]
    fn resumed_pretraining_matches_uninterrupted() {
        let data = prepared(&memorizable());
        let mut cfg = tiny_config();
        cfg.pretrain_epochs = 8;
        let full = pretrain(&cfg, &data, None, None).unwrap();
        let half = pretrain(&cfg, &data, None, Some(3)).unwrap();
        let bytes = half.checkpoint.to_bytes().unwrap();
        let rest = pretrain(&cfg, &data, Some(Checkpoint::from_bytes(&bytes).unwrap()), None).unwrap();
        let joined: Vec<f64> = half.logs.iter().chain(&rest.logs).map(|l| l.mle).collect();
        let straight: Vec<f64> = full.logs.iter().map(|l| l.mle).collect();
        assert_eq!(joined, straight);
        assert_eq!(rest.checkpoint, full.checkpoint);
    }

    #[test]
    fn backward_pretraining_mirrors_forward_on_swapped_data() {
        let ds = memorizable();
        let mut cfg = tiny_config();
        cfg.pretrain_epochs = 3;
        let a = pretrain(&cfg, &prepared(&ds), None, None).unwrap().checkpoint;
        let b = pretrain(&cfg, &prepared(&ds.swapped()), None, None).unwrap().checkpoint;
        assert_eq!(a.backward.params.renamed("fwd"), b.forward.params);
        assert_eq!(a.forward.params.renamed("bwd"), b.backward.params);
    }

    #[test]
    fn adversarial_runs_are_deterministic_and_logged() {
        let data = prepared(&memorizable());
        let mut cfg = tiny_config();
        cfg.pretrain_epochs = 2;
        let pre = pretrain(&cfg, &data, None, None).unwrap().checkpoint;
        for mode in [Objective::Seq2seq, Objective::Cgan, Objective::Aim, Objective::Daim] {
            cfg.mode = mode;
            let a = train_adversarial(&cfg, &data, Some(pre.clone()), None).unwrap();
            let b = train_adversarial(&cfg, &data, Some(pre.clone()), None).unwrap();
            assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
            assert_eq!(a.logs.len(), 3);
            assert!(!a.checkpoint.cold_start);
            assert_eq!(a.logs[0].disc_loss.is_some(), mode.adversarial());
            assert_eq!(a.logs[0].mi.is_some(), matches!(mode, Objective::Aim | Objective::Daim));
        }
    }

    #[test]
    fn adversarial_resume_matches_uninterrupted() {
        let data = prepared(&memorizable());
        let mut cfg = tiny_config();
        cfg.pretrain_epochs = 1;
        cfg.mode = Objective::Daim;
        let pre = pretrain(&cfg, &data, None, None).unwrap().checkpoint;
        let full = train_adversarial(&cfg, &data, Some(pre.clone()), None).unwrap();
        let half = train_adversarial(&cfg, &data, Some(pre), Some(1)).unwrap();
        let rest = train_adversarial(&cfg, &data, Some(half.checkpoint), None).unwrap();
        assert_eq!(rest.checkpoint, full.checkpoint);
    }

    #[test]
    fn cold_start_is_flagged() {
        let data = prepared(&memorizable());
        let mut cfg = tiny_config();
        cfg.adversarial_steps = 1;
        cfg.mode = Objective::Cgan;
        let out = train_adversarial(&cfg, &data, None, None).unwrap();
        assert!(out.checkpoint.cold_start);
        assert!(out.warnings.iter().any(|w| w.contains("cold start")));
    }

    #[test]
    fn empty_train_split_is_rejected() {
        let mut data = prepared(&memorizable());
        data.train.clear();
        assert!(matches!(pretrain(&tiny_config(), &data, None, None), Err(Error::Empty(_))));
    }

    #[test]
    fn divergence_aborts() {
        let data = prepared(&memorizable());
        let mut cfg = tiny_config();
        cfg.pretrain_epochs = 1;
        let mut ck = Checkpoint::init(&cfg, data.vocab.clone(), crate::trainer::resolved_dims(&cfg, &data.vocab));
        let w = ck.forward.params.get_mut("fwd/out.v").unwrap();
        w.data_mut()[0] = f64::NAN;
        let err = pretrain(&cfg, &data, Some(ck), None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }
}
