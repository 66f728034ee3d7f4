//! Training protocols (MLE pretraining, cGAN / AIM / DAIM), the MMI-bidi
//! reranking baseline, checkpoints and evaluation.

mod checkpoint;
mod eval;
mod loops;
mod rerank;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, Split, TaskSpec, Vocab};
use crate::error::{Error, Result};
use crate::objectives::{Example, Objective, ObjectiveWeights};
use crate::seqmodels::ModelDims;

pub use checkpoint::{Checkpoint, Phase, BACKWARD_ROLE, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, FORWARD_ROLE};
pub use eval::{evaluate_model, generate_responses, DecodeConfig, Evaluation};
pub use loops::{pretrain, train_adversarial, RunOutcome, StepLog};
pub use rerank::{candidates, mmi_bidi_rerank, pick, rerank_corpus, select_mmi_weight, Candidate, Reranked, WeightSelection};

/// Everything that determines a run. Unknown keys are rejected; missing keys
/// take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Objective,
    pub seed: u64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub adversarial_steps: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    /// Discriminator updates per adversarial batch.
    pub disc_steps: usize,
    /// Generator updates per adversarial batch.
    pub gen_steps: usize,
    /// Discriminator-only updates before the first generator update.
    pub disc_warmup: usize,
    pub beam_width: usize,
    /// Candidate MMI weights searched on the validation split.
    pub mmi_grid: Vec<f64>,
    /// Pairs drawn when the data comes from the synthetic task.
    pub synthetic_pairs: usize,
    pub objective: ObjectiveWeights,
    pub model: ModelDims,
    pub task: TaskSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Objective::Aim,
            seed: 0,
            batch_size: 16,
            pretrain_epochs: 10,
            pretrain_lr: 1e-3,
            adversarial_steps: 1000,
            gen_lr: 1e-3,
            disc_lr: 1e-3,
            disc_steps: 1,
            gen_steps: 1,
            disc_warmup: 0,
            beam_width: 5,
            mmi_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            synthetic_pairs: 2000,
            objective: ObjectiveWeights::default(),
            model: ModelDims::default(),
            task: TaskSpec::default(),
        }
    }
}

fn cfg_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config {
            key: e.span().map(|s| key_path_at(text, s.start)).unwrap_or_default(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.objective.validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("beam_width", self.beam_width),
            ("gen_steps", self.gen_steps),
            ("synthetic_pairs", self.synthetic_pairs),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(cfg_err(key, "must be positive"));
            }
        }
        for (key, lr) in [("pretrain_lr", self.pretrain_lr), ("gen_lr", self.gen_lr), ("disc_lr", self.disc_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(cfg_err(key, format!("must be positive, got {lr}")));
            }
        }
        if let Some(w) = self.mmi_grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(cfg_err("mmi_grid", format!("weights must lie in [0, 1], got {w}")));
        }
        if self.objective.baseline && self.batch_size < 2 && matches!(self.mode, Objective::Aim | Objective::Daim) {
            return Err(cfg_err("batch_size", "the batch-mean baseline needs batches of at least 2"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Dotted key path of the assignment containing byte offset `at`.
fn key_path_at(text: &str, at: usize) -> String {
    let mut section = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        let header = trimmed.starts_with('[');
        if header {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if at < offset + line.len() {
            let key = trimmed.split('=').next().unwrap_or("").trim();
            return if header || key.is_empty() {
                section
            } else if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
        }
        offset += line.len();
    }
    section
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Id-encoded splits plus the vocabulary that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    /// Sentences cut to fit the model's length limits.
    pub truncated: usize,
}

/// Maps a dataset to ids. Both sides are capped at `min(max_len, max_steps - 1)`
/// tokens so either direction can consume either side.
pub fn prepare_data(dataset: &Dataset, vocab: Vocab, dims: &ModelDims) -> Result<PreparedData> {
    let cap = dims.max_len.min(dims.max_steps.saturating_sub(1));
    if cap == 0 {
        return Err(cfg_err("model.max_steps", "must be at least 2"));
    }
    let mut truncated = 0;
    let mut encode = |tokens: &[String]| {
        let mut ids = vocab.encode(tokens);
        if ids.len() > cap {
            ids.truncate(cap);
            truncated += 1;
        }
        ids
    };
    let mut splits: [Vec<Example>; 3] = Default::default();
    for (pair, split) in dataset.pairs.iter().zip(&dataset.splits) {
        let ex = Example {
            source: encode(&pair.source),
            target: encode(&pair.target),
        };
        let idx = match split {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        };
        splits[idx].push(ex);
    }
    let [train, valid, test] = splits;
    Ok(PreparedData {
        vocab,
        train,
        valid,
        test,
        truncated,
    })
}

/// Model dimensions with the vocabulary size resolved to the built vocabulary.
pub fn resolved_dims(config: &TrainConfig, vocab: &Vocab) -> ModelDims {
    ModelDims {
        vocab_size: vocab.len(),
        ..config.model.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TableEntrySpec;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = TrainConfig::from_toml("").unwrap();
        assert_eq!(cfg.objective.lambda, 0.1);
        assert_eq!(cfg.objective.mle_weight, 0.001);
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn negative_lambda_is_rejected_by_key() {
        let err = TrainConfig::from_toml("[objective]\nlambda = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "objective.lambda"), "{err}");
    }

    #[test]
    fn unknown_keys_and_type_errors_are_rejected() {
        assert!(matches!(TrainConfig::from_toml("lamda = 0.1\n"), Err(Error::Config { .. })));
        let err = TrainConfig::from_toml("batch_size = \"x\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "batch_size"), "{err}");
        let err = TrainConfig::from_toml("[objective]\ntau = \"x\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "objective.tau"), "{err}");
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let mut cfg = TrainConfig::default();
        cfg.mode = Objective::Daim;
        cfg.objective.tau = 0.25;
        cfg.task = TaskSpec::Table {
            entries: vec![TableEntrySpec {
                source: "a b".into(),
                target: "c".into(),
                prob: 1.0,
                bland: false,
            }],
        };
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(TrainConfig::default().hash(), cfg.hash());
    }
}
