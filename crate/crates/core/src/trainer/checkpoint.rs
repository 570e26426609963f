//! Versioned binary checkpoint container. The byte layout is described in `docs/checkpoint.md`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::scaffold::ScaffoldVocab;
use crate::Error;

use super::config::TrainConfig;
use super::model::{Gate, Model};

pub const MAGIC: &[u8; 8] = b"TOPXCKPT";
pub const VERSION: u32 = 1;

const PARAM_PREFIX: &str = "param/";
const ADAM_M_PREFIX: &str = "adam.m/";
const ADAM_V_PREFIX: &str = "adam.v/";
const EXPLICIT_CENTROIDS: &str = "state/explicit.centroids";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub task_names: Vec<String>,
    /// Training-set scaffold keys, in vocabulary order.
    pub scaffold_vocab: Vec<String>,
    /// Ring-count group per expert, for the explicit gate.
    pub explicit_groups: Vec<String>,
    pub experts: usize,
    pub epoch: usize,
    pub adam: AdamConfig,
    pub adam_step: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
    pub adam: AdamState,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn vocab(&self) -> ScaffoldVocab {
        ScaffoldVocab::build(self.meta.scaffold_vocab.iter().map(String::as_str))
    }

    /// Named tensors in the order they are written.
    fn records(&self) -> Vec<(String, &Tensor)> {
        let store = &self.model.store;
        let (m, v) = self.adam.moments();
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for id in store.ids() {
            out.push((format!("{PARAM_PREFIX}{}", store.name(id)), store.value(id)));
        }
        for (i, id) in store.ids().enumerate() {
            out.push((format!("{ADAM_M_PREFIX}{}", store.name(id)), &m[i]));
        }
        for (i, id) in store.ids().enumerate() {
            out.push((format!("{ADAM_V_PREFIX}{}", store.name(id)), &v[i]));
        }
        if let Gate::Explicit { centroids } = &self.model.gate {
            out.push((EXPLICIT_CENTROIDS.to_string(), centroids));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let hash = self.meta.config.hash();
        out.extend_from_slice(&(hash.len() as u32).to_le_bytes());
        out.extend_from_slice(hash.as_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let records = self.records();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(ck("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ck(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let hash_len = read_u32(&mut r)? as usize;
        let hash = String::from_utf8(read_vec(&mut r, hash_len)?)
            .map_err(|_| ck("config hash is not UTF-8"))?;
        let meta_len = read_u64(&mut r)? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(&read_vec(&mut r, meta_len)?)
            .map_err(|e| ck(format!("metadata: {e}")))?;
        if meta.config.hash() != hash {
            return Err(ck("config hash does not match the stored configuration"));
        }
        let count = read_u32(&mut r)? as usize;
        let mut records: Vec<(String, Tensor)> = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_vec(&mut r, name_len)?)
                .map_err(|_| ck("record name is not UTF-8"))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ck("shape overflow"))?;
            if numel.checked_mul(8).is_none_or(|b| b > r.len()) {
                return Err(ck(format!("record {name} is truncated")));
            }
            let data = (0..numel)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>, _>>()?;
            records.push((name, Tensor::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(ck(format!("{} trailing bytes", r.len())));
        }
        Self::assemble(meta, records)
    }

    fn assemble(meta: CheckpointMeta, records: Vec<(String, Tensor)>) -> Result<Self, Error> {
        let mut model = Model::new(
            &meta.config,
            meta.task_names.len(),
            meta.scaffold_vocab.len(),
            meta.experts,
        )?;
        let mut by_name: std::collections::HashMap<String, Tensor> = records.into_iter().collect();
        let mut take = |name: String, shape: &[usize]| -> Result<Tensor, Error> {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| ck(format!("missing record {name}")))?;
            if t.shape() != shape {
                return Err(ck(format!(
                    "record {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t)
        };
        let ids: Vec<_> = model.store.ids().collect();
        let mut m = Vec::with_capacity(ids.len());
        let mut v = Vec::with_capacity(ids.len());
        for &id in &ids {
            let name = model.store.name(id).to_string();
            let shape = model.store.value(id).shape().to_vec();
            *model.store.value_mut(id) = take(format!("{PARAM_PREFIX}{name}"), &shape)?;
            m.push(take(format!("{ADAM_M_PREFIX}{name}"), &shape)?);
            v.push(take(format!("{ADAM_V_PREFIX}{name}"), &shape)?);
        }
        if let Gate::Explicit { centroids } = &mut model.gate {
            let shape = centroids.shape().to_vec();
            *centroids = take(EXPLICIT_CENTROIDS.to_string(), &shape)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(ck(format!("unexpected record {extra}")));
        }
        let adam = AdamState::from_parts(meta.adam, meta.adam_step, m, v);
        Ok(Checkpoint { meta, model, adam })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), Error> {
    r.read_exact(buf)
        .map_err(|_| ck("unexpected end of checkpoint"))
}

fn read_vec(r: &mut &[u8], len: usize) -> Result<Vec<u8>, Error> {
    if len > r.len() {
        return Err(ck("unexpected end of checkpoint"));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut &[u8]) -> Result<u32, Error> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, Error> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
