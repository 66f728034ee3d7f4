//! Binary checkpoint: header, JSON metadata, then named `f64` blocks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic[8] | version u32 | config sha256[32] | meta_len u64 | meta JSON
//! | block_count u64 | { name_len u32 | name | rank u32 | dims u64* | data f64* }*
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::params::{Adam, AdamConfig, ParamSet};
use crate::rng::stream;
use crate::seqmodels::{Discriminator, Generator, ModelDims};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AIMLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const FORWARD_ROLE: &str = "fwd";
pub const BACKWARD_ROLE: &str = "bwd";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Pretrain,
    Adversarial,
}

/// Full training state: both generators, the discriminator and their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Updates completed in `phase`.
    pub step: u64,
    /// Set when adversarial training started without pretrained weights.
    pub cold_start: bool,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub forward: Generator,
    pub backward: Generator,
    pub disc: Discriminator,
    pub opt_forward: Adam,
    pub opt_backward: Adam,
    pub opt_disc: Adam,
}

#[derive(Serialize, Deserialize)]
struct OptMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    phase: Phase,
    step: u64,
    cold_start: bool,
    config_toml: String,
    dims: ModelDims,
    vocab: Vocab,
    optimizers: BTreeMap<String, OptMeta>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Freshly initialized models. Both generators draw from the same init
    /// stream so they start identical up to their role prefix.
    pub fn init(config: &TrainConfig, vocab: Vocab, dims: ModelDims) -> Self {
        let seed = config.seed;
        let forward = Generator::new(dims.clone(), FORWARD_ROLE, &mut stream(seed, "init/gen", 0));
        let backward = Generator::new(dims.clone(), BACKWARD_ROLE, &mut stream(seed, "init/gen", 0));
        let disc = Discriminator::new(dims, &mut stream(seed, "init/disc", 0));
        Checkpoint {
            phase: Phase::Init,
            step: 0,
            cold_start: false,
            config: config.clone(),
            vocab,
            forward,
            backward,
            disc,
            opt_forward: Adam::new(AdamConfig {
                lr: config.pretrain_lr,
                ..AdamConfig::default()
            }),
            opt_backward: Adam::new(AdamConfig {
                lr: config.pretrain_lr,
                ..AdamConfig::default()
            }),
            opt_disc: Adam::new(AdamConfig {
                lr: config.disc_lr,
                ..AdamConfig::default()
            }),
        }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.forward.dims
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    fn optimizers(&self) -> [(&'static str, &Adam); 3] {
        [("fwd", &self.opt_forward), ("bwd", &self.opt_backward), ("disc", &self.opt_disc)]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            phase: self.phase,
            step: self.step,
            cold_start: self.cold_start,
            config_toml: self.config.to_toml(),
            dims: self.dims().clone(),
            vocab: self.vocab.clone(),
            optimizers: self
                .optimizers()
                .into_iter()
                .map(|(k, o)| {
                    (
                        k.to_string(),
                        OptMeta {
                            config: o.config.clone(),
                            step: o.step,
                        },
                    )
                })
                .collect(),
        };
        let meta = serde_json::to_vec(&meta)?;

        let mut blocks: Vec<(String, &Tensor)> = Vec::new();
        for set in [&self.forward.params, &self.backward.params, &self.disc.params] {
            blocks.extend(set.iter().map(|(n, t)| (n.clone(), t)));
        }
        for (key, opt) in self.optimizers() {
            blocks.extend(opt.first.iter().map(|(n, t)| (format!("adam/{key}/m/{n}"), t)));
            blocks.extend(opt.second.iter().map(|(n, t)| (format!("adam/{key}/v/{n}"), t)));
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(self.config.to_toml().as_bytes()));
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
        for (name, t) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(ck("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ck(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hash = r.take(32)?.to_vec();
        let meta_len = r.u64()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        if Sha256::digest(meta.config_toml.as_bytes()).as_slice() != hash.as_slice() {
            return Err(ck("config hash does not match the embedded config"));
        }
        let config = TrainConfig::from_toml(&meta.config_toml)?;

        let count = r.u64()?;
        let mut sets: BTreeMap<&str, ParamSet> = BTreeMap::new();
        let mut moments: BTreeMap<(String, String), BTreeMap<String, Tensor>> = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ck("block name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(shape, data)?;
            if let Some(rest) = name.strip_prefix("adam/") {
                let mut parts = rest.splitn(3, '/');
                let (Some(opt), Some(kind), Some(param)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(ck(format!("malformed optimizer block `{name}`")));
                };
                moments
                    .entry((opt.to_string(), kind.to_string()))
                    .or_default()
                    .insert(param.to_string(), tensor);
            } else {
                let role = match name.split_once('/').map(|(r, _)| r) {
                    Some(FORWARD_ROLE) => FORWARD_ROLE,
                    Some(BACKWARD_ROLE) => BACKWARD_ROLE,
                    Some("disc") => "disc",
                    _ => return Err(ck(format!("unknown parameter block `{name}`"))),
                };
                sets.entry(role).or_default().insert(name, tensor);
            }
        }
        if r.pos != bytes.len() {
            return Err(ck(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut take_set = |role| sets.remove(role).unwrap_or_default();
        let forward = Generator::from_params(meta.dims.clone(), FORWARD_ROLE, take_set(FORWARD_ROLE))?;
        let backward = Generator::from_params(meta.dims.clone(), BACKWARD_ROLE, take_set(BACKWARD_ROLE))?;
        let disc = Discriminator::from_params(meta.dims.clone(), take_set("disc"))?;
        let mut opt = |key: &str| -> Result<Adam> {
            let m = meta
                .optimizers
                .get(key)
                .ok_or_else(|| ck(format!("missing optimizer `{key}`")))?;
            Ok(Adam {
                config: m.config.clone(),
                step: m.step,
                first: moments.remove(&(key.to_string(), "m".to_string())).unwrap_or_default(),
                second: moments.remove(&(key.to_string(), "v".to_string())).unwrap_or_default(),
            })
        };
        let (opt_forward, opt_backward, opt_disc) = (opt("fwd")?, opt("bwd")?, opt("disc")?);
        let mut vocab = meta.vocab;
        vocab.reindex();
        Ok(Checkpoint {
            phase: meta.phase,
            step: meta.step,
            cold_start: meta.cold_start,
            config,
            vocab,
            forward,
            backward,
            disc,
            opt_forward,
            opt_backward,
            opt_disc,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ck(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
