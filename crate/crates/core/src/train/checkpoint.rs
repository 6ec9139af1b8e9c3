//! Binary checkpoint: `GENADCKP`, u32 LE version, u32 LE metadata length,
//! JSON metadata, raw LE `f64` tensors in manifest order, CRC-32 of
//! everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::model::{GenAdModel, ModelConfig};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"GENADCKP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const MASK_SERIES: &str = "mask_series";

/// Where the training RNG stood when the checkpoint was taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngDigest {
    pub seed: u64,
    pub word_pos: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: GenAdModel,
    /// Present when the model was fitted to a single entity.
    pub stats: Option<NormalizationStats>,
    pub step: u64,
    pub rng: RngDigest,
    /// Points of the entity's series used for training.
    pub train_len: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: ModelConfig,
    manifest: Vec<ManifestEntry>,
    stats: Option<NormalizationStats>,
    step: u64,
    rng: RngDigest,
    train_len: Option<usize>,
}

impl Checkpoint {
    /// An untrained model with no fitted statistics.
    pub fn fresh(model: GenAdModel) -> Self {
        Self { model, stats: None, step: 0, rng: RngDigest::default(), train_len: None }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let mut manifest = vec![ManifestEntry { name: MASK_SERIES.into(), shape: vec![m.mask_series().len()] }];
        manifest.extend(
            m.param_names()
                .iter()
                .zip(m.params())
                .map(|(n, t)| ManifestEntry { name: n.clone(), shape: t.shape().to_vec() }),
        );
        let meta = serde_json::to_vec(&Metadata {
            config: m.config().clone(),
            manifest,
            stats: self.stats.clone(),
            step: self.step,
            rng: self.rng,
            train_len: self.train_len,
        })?;
        let floats = m.mask_series().len() + m.parameter_count();
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 8 * floats + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let all = std::iter::once(m.mask_series()).chain(m.params().iter().map(Tensor::data));
        for x in all.flatten() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::NotCheckpoint);
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::CorruptedCheckpoint);
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
        }
        let body = &bytes[..bytes.len() - 4];
        if crc32fast::hash(body) != word(bytes.len() - 4) {
            return Err(Error::CorruptedCheckpoint);
        }
        let meta_len = word(12) as usize;
        let meta_end =
            HEADER_LEN.checked_add(meta_len).filter(|&e| e <= body.len()).ok_or(Error::CorruptedCheckpoint)?;
        let meta: Metadata =
            serde_json::from_slice(&bytes[HEADER_LEN..meta_end]).map_err(|_| Error::CorruptedCheckpoint)?;

        let mut floats = body[meta_end..].chunks_exact(8);
        if !floats.remainder().is_empty() {
            return Err(Error::CorruptedCheckpoint);
        }
        let mut take = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    floats
                        .next()
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .ok_or(Error::CorruptedCheckpoint)
                })
                .collect()
        };
        let mut entries = meta.manifest.into_iter();
        let first = entries.next().ok_or(Error::CorruptedCheckpoint)?;
        if first.name != MASK_SERIES || first.shape.len() != 1 {
            return Err(Error::CorruptedCheckpoint);
        }
        let mask_series = take(first.shape[0])?;
        let mut named = Vec::new();
        for e in entries {
            let data = take(e.shape.iter().product())?;
            named.push((e.name, Tensor::new(e.shape, data).map_err(|_| Error::CorruptedCheckpoint)?));
        }
        if floats.next().is_some() {
            return Err(Error::CorruptedCheckpoint);
        }
        let model = GenAdModel::from_parts(meta.config, mask_series, named).map_err(|_| Error::CorruptedCheckpoint)?;
        Ok(Self { model, stats: meta.stats, step: meta.step, rng: meta.rng, train_len: meta.train_len })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::io::atomic_write(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
