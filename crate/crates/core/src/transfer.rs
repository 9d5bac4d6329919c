//! Checkpoint files and two-phase parameter transfer.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::{format_timestamp, parse_timestamp, MinMaxScaler, WindowedDataset};
use crate::models::{check_manifest, init_model, ModelError, ModelSpec, ModelState};
use crate::tensor::{NumArray, ParamSet, Parameter};
use crate::train::{
    train_observed, EpochEnd, Stage, TrainConfig, TrainError, TrainHistory, DEFAULT_BATCH,
    DEFAULT_CLIP_NORM,
};

pub const MAGIC: &[u8; 4] = b"TLTP";
pub const FORMAT_VERSION: u32 = 1;
pub const TASK: &str = "single-step-forecast";

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reuse policy: {0}")]
    Policy(String),
    #[error("transfer schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub source_domain_name: String,
    pub task: String,
    pub train_epochs: usize,
    /// Seconds since the Unix epoch.
    pub created: i64,
}

impl CheckpointMeta {
    pub fn new(source_domain_name: impl Into<String>, train_epochs: usize, created: i64) -> Self {
        Self {
            source_domain_name: source_domain_name.into(),
            task: TASK.to_string(),
            train_epochs,
            created,
        }
    }

    fn to_block(&self) -> String {
        format!(
            "source_domain_name={}\ntask={}\ntrain_epochs={}\ncreated={}\n",
            self.source_domain_name,
            self.task,
            self.train_epochs,
            format_timestamp(self.created)
        )
    }

    fn from_block(block: &str) -> Result<Self, TransferError> {
        let mut name = None;
        let mut task = None;
        let mut epochs = None;
        let mut created = None;
        for line in block.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TransferError::Malformed(format!("metadata line `{line}`")))?;
            match k {
                "source_domain_name" => name = Some(v.to_string()),
                "task" => task = Some(v.to_string()),
                "train_epochs" => {
                    epochs = Some(v.parse().map_err(|_| {
                        TransferError::Malformed(format!("train_epochs `{v}`"))
                    })?)
                }
                "created" => {
                    created = Some(parse_timestamp(v).ok_or_else(|| {
                        TransferError::Malformed(format!("created `{v}`"))
                    })?)
                }
                _ => {}
            }
        }
        let missing = |k: &str| TransferError::Malformed(format!("metadata lacks `{k}`"));
        Ok(Self {
            source_domain_name: name.ok_or_else(|| missing("source_domain_name"))?,
            task: task.ok_or_else(|| missing("task"))?,
            train_epochs: epochs.ok_or_else(|| missing("train_epochs"))?,
            created: created.ok_or_else(|| missing("created"))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub scaler: MinMaxScaler,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(
        model: &ModelState,
        scaler: MinMaxScaler,
        meta: CheckpointMeta,
    ) -> Result<Self, TransferError> {
        model.check_manifest()?;
        let mut params = ParamSet::new();
        for p in model.params.iter() {
            params
                .insert(Parameter::new(p.name.clone(), p.value.clone()))
                .map_err(ModelError::from)?;
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            spec: model.spec,
            params,
            scaler,
            meta,
        })
    }

    /// A trainable copy of the stored model.
    pub fn model(&self) -> ModelState {
        ModelState {
            spec: self.spec,
            params: self.params.clone(),
        }
    }

    /// Errors with a manifest mismatch unless the stored spec is `expected`.
    pub fn expect_spec(&self, expected: &ModelSpec) -> Result<(), TransferError> {
        if &self.spec != expected {
            return Err(ModelError::Manifest(format!(
                "checkpoint holds {} but {} was expected",
                self.spec, expected
            ))
            .into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.format_version);
        put_str(&mut out, &self.spec.descriptor());
        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.iter() {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.value.rank() as u32);
            for &d in p.value.shape() {
                put_u32(&mut out, d as u32);
            }
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.scaler.lo.to_le_bytes());
        out.extend_from_slice(&self.scaler.hi.to_le_bytes());
        put_str(&mut out, &self.meta.to_block());
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    /// Structure is read first so truncation is reported as such; the
    /// checksum is verified before any field is interpreted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransferError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok().map(|m| m != MAGIC).unwrap_or(true) {
            return Err(TransferError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(TransferError::Version { found: version });
        }
        let descriptor = r.string()?;
        let count = r.u32()? as usize;
        let mut raw_params = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| TransferError::Malformed(format!("shape {shape:?} overflows")))?;
            let needed = n
                .checked_mul(8)
                .ok_or_else(|| TransferError::Malformed(format!("shape {shape:?} overflows")))?;
            let data = r
                .take(needed)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            raw_params.push((name, shape, data));
        }
        let lo = r.f64()?;
        let hi = r.f64()?;
        let block = r.string()?;
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(TransferError::Malformed(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(TransferError::Checksum { stored, computed });
        }

        let spec = ModelSpec::parse_descriptor(&descriptor)?;
        let mut params = ParamSet::new();
        for (name, shape, data) in raw_params {
            let value = NumArray::new(shape, data).map_err(ModelError::from)?;
            params
                .insert(Parameter::new(name, value))
                .map_err(ModelError::from)?;
        }
        check_manifest(&spec, &params)?;
        let scaler = MinMaxScaler::from_bounds(lo, hi)
            .map_err(|e| TransferError::Malformed(format!("scaler: {e}")))?;
        Ok(Self {
            format_version: version,
            spec,
            params,
            scaler,
            meta: CheckpointMeta::from_block(&block)?,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TransferError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(TransferError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TransferError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, TransferError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, TransferError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TransferError::Malformed(format!("invalid UTF-8 at offset {}", self.pos)))
    }
}

pub fn save_checkpoint(
    model: &ModelState,
    scaler: MinMaxScaler,
    meta: CheckpointMeta,
    path: &Path,
) -> Result<Checkpoint, TransferError> {
    let ckpt = Checkpoint::from_model(model, scaler, meta)?;
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TransferError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

/// Splits a manifest into parameters copied from the checkpoint and
/// parameters drawn fresh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReusePolicy {
    pub reused: BTreeSet<String>,
    pub reinitialized: BTreeSet<String>,
}

impl ReusePolicy {
    /// Everything except the output head is reused.
    pub fn default_for(spec: &ModelSpec) -> Result<Self, TransferError> {
        let arch = spec.architecture()?;
        let (head, body): (Vec<String>, Vec<String>) = spec
            .manifest()?
            .into_iter()
            .map(|e| e.name)
            .partition(|n| arch.is_output_head(n));
        Ok(Self {
            reused: body.into_iter().collect(),
            reinitialized: head.into_iter().collect(),
        })
    }

    pub fn reuse_all(spec: &ModelSpec) -> Result<Self, TransferError> {
        Ok(Self {
            reused: spec.manifest()?.into_iter().map(|e| e.name).collect(),
            reinitialized: BTreeSet::new(),
        })
    }

    pub fn reinit_all(spec: &ModelSpec) -> Result<Self, TransferError> {
        Ok(Self {
            reused: BTreeSet::new(),
            reinitialized: spec.manifest()?.into_iter().map(|e| e.name).collect(),
        })
    }

    /// Reuses every parameter whose name starts with one of `prefixes`.
    pub fn reuse_prefixes(spec: &ModelSpec, prefixes: &[&str]) -> Result<Self, TransferError> {
        let (reused, reinit): (Vec<String>, Vec<String>) = spec
            .manifest()?
            .into_iter()
            .map(|e| e.name)
            .partition(|n| prefixes.iter().any(|p| n.starts_with(p)));
        Ok(Self {
            reused: reused.into_iter().collect(),
            reinitialized: reinit.into_iter().collect(),
        })
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<(), TransferError> {
        if let Some(both) = self.reused.intersection(&self.reinitialized).next() {
            return Err(TransferError::Policy(format!(
                "`{both}` is both reused and reinitialized"
            )));
        }
        let manifest: BTreeSet<String> = spec.manifest()?.into_iter().map(|e| e.name).collect();
        let covered: BTreeSet<String> = self.reused.union(&self.reinitialized).cloned().collect();
        if let Some(extra) = covered.difference(&manifest).next() {
            return Err(TransferError::Policy(format!("`{extra}` is not in the {spec} manifest")));
        }
        if let Some(missing) = manifest.difference(&covered).next() {
            return Err(TransferError::Policy(format!("`{missing}` is not assigned")));
        }
        Ok(())
    }
}

/// Reused names are copied bitwise and frozen; the rest come from
/// `init_model(spec, seed)` and stay trainable.
pub fn init_from_checkpoint(
    ckpt: &Checkpoint,
    policy: &ReusePolicy,
    seed: u64,
) -> Result<ModelState, TransferError> {
    policy.validate(&ckpt.spec)?;
    let mut model = init_model(ckpt.spec, seed)?;
    for p in model.params.iter_mut() {
        if policy.reused.contains(&p.name) {
            let src = ckpt
                .params
                .get(&p.name)
                .ok_or_else(|| TransferError::Policy(format!("checkpoint lacks `{}`", p.name)))?;
            p.value = src.value.clone();
            p.frozen = true;
        } else {
            p.frozen = false;
        }
    }
    Ok(model)
}

/// Phase 1 trains only reinitialized parameters; phase 2 trains everything
/// at a lower rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSchedule {
    pub freeze_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_lr: f64,
}

impl Default for TransferSchedule {
    fn default() -> Self {
        Self {
            freeze_epochs: 10,
            phase1_lr: 1e-3,
            phase2_lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferOptions {
    /// `None` selects [`ReusePolicy::default_for`].
    pub policy: Option<ReusePolicy>,
    pub schedule: TransferSchedule,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            policy: None,
            schedule: TransferSchedule::default(),
            batch_size: DEFAULT_BATCH,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

/// The two-stage training config `transfer_fit` runs.
pub fn transfer_config(
    epochs: usize,
    policy: &ReusePolicy,
    schedule: &TransferSchedule,
    batch_size: usize,
    clip_norm: Option<f64>,
    seed: u64,
) -> Result<TrainConfig, TransferError> {
    let k = schedule.freeze_epochs;
    if k == 0 {
        return Err(TransferError::Schedule("freeze_epochs must be at least 1".into()));
    }
    if epochs <= k {
        return Err(TransferError::Schedule(format!(
            "epochs ({epochs}) must exceed the {k} frozen epochs"
        )));
    }
    Ok(TrainConfig {
        epochs,
        batch_size,
        stages: vec![
            Stage {
                epochs: 0..k,
                lr: schedule.phase1_lr,
                frozen: policy.reused.clone(),
            },
            Stage {
                epochs: k..epochs,
                lr: schedule.phase2_lr,
                frozen: BTreeSet::new(),
            },
        ],
        seed,
        clip_norm,
    })
}

pub fn transfer_fit(
    target_train: &WindowedDataset,
    ckpt: &Checkpoint,
    epochs: usize,
    seed: u64,
) -> Result<(ModelState, TrainHistory), TransferError> {
    transfer_fit_observed(target_train, ckpt, epochs, seed, &TransferOptions::default(), |_| {})
}

pub fn transfer_fit_with(
    target_train: &WindowedDataset,
    ckpt: &Checkpoint,
    epochs: usize,
    seed: u64,
    opts: &TransferOptions,
) -> Result<(ModelState, TrainHistory), TransferError> {
    transfer_fit_observed(target_train, ckpt, epochs, seed, opts, |_| {})
}

pub fn transfer_fit_observed(
    target_train: &WindowedDataset,
    ckpt: &Checkpoint,
    epochs: usize,
    seed: u64,
    opts: &TransferOptions,
    observe: impl FnMut(&EpochEnd<'_>),
) -> Result<(ModelState, TrainHistory), TransferError> {
    let policy = match &opts.policy {
        Some(p) => p.clone(),
        None => ReusePolicy::default_for(&ckpt.spec)?,
    };
    let cfg = transfer_config(
        epochs,
        &policy,
        &opts.schedule,
        opts.batch_size,
        opts.clip_norm,
        seed,
    )?;
    let mut model = init_from_checkpoint(ckpt, &policy, seed)?;
    let history = train_observed(&mut model, target_train, &cfg, observe)?;
    model.params.set_frozen_where(|_| false);
    Ok((model, history))
}
