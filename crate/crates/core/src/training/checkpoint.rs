//! Checkpoint serialization. Little-endian binary layout:
//!
//! ```text
//! "KG2T"  u32 version  u64 header_len  header JSON
//! repeated: u64 name_len, name, u64 element_count, f64 elements
//! u32 CRC32 of everything above
//! ```
//!
//! The header carries the training config, step counter, vocabulary lists,
//! relation vocabulary, and the RNG scheme tag. Optimizer moments ride along
//! as extra arrays named `adam.m.<param>` / `adam.v.<param>`, so loading a
//! checkpoint and continuing reproduces an uninterrupted run bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainedModel;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{RelationVocab, Vocab};
use crate::model::Model;
use crate::numerics::ParamStore;

const MAGIC: &[u8; 4] = b"KG2T";
const VERSION: u32 = 1;

/// Tag for the randomness scheme: all draws are derived from (seed, purpose,
/// counters), so no generator state needs to be stored.
const RNG_SCHEME: &str = "counter-streams-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    step: u64,
    node_vocab: Vec<String>,
    target_vocab: Option<Vec<String>>,
    relations: RelationVocab,
    rng: String,
}

fn push_array(out: &mut Vec<u8>, name: &str, values: &[f64]) {
    out.extend_from_slice(&(name.len() as u64).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_bytes(trained: &TrainedModel) -> Result<Vec<u8>> {
    let model = &trained.model;
    let header = Header {
        config: model.cfg.clone(),
        step: trained.step,
        node_vocab: model.node_vocab().full_list().to_vec(),
        target_vocab: if model.shares_vocab() {
            None
        } else {
            Some(model.target_vocab().full_list().to_vec())
        },
        relations: model.relations.clone(),
        rng: RNG_SCHEME.into(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, p) in trained.store.iter() {
        push_array(&mut out, &p.name, p.tensor.data());
        push_array(&mut out, &format!("adam.m.{}", p.name), &p.adam_m);
        push_array(&mut out, &format!("adam.v.{}", p.name), &p.adam_v);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save(path: &Path, trained: &TrainedModel) -> Result<()> {
    std::fs::write(path, save_bytes(trained)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file holds {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))
    }

    fn f64_array(&mut self) -> Result<Vec<f64>> {
        let count = self.u64()? as usize;
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint("array length overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Where an incoming array lands: parameter values or one of the two
/// optimizer moment vectors.
enum Slot {
    Value(usize),
    AdamM(usize),
    AdamV(usize),
}

fn resolve(store: &ParamStore, name: &str) -> Result<Slot> {
    let (slot, key): (fn(usize) -> Slot, &str) = if let Some(rest) = name.strip_prefix("adam.m.") {
        (Slot::AdamM, rest)
    } else if let Some(rest) = name.strip_prefix("adam.v.") {
        (Slot::AdamV, rest)
    } else {
        (Slot::Value, name)
    };
    match store.id(key) {
        Some(pid) => Ok(slot(pid)),
        None => Err(Error::Checkpoint(format!(
            "unknown parameter \"{name}\" in checkpoint"
        ))),
    }
}

pub fn load_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 4 + 4 + 8 + 4 {
        return Err(Error::Checkpoint(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.rng != RNG_SCHEME {
        return Err(Error::Checkpoint(format!(
            "unsupported rng scheme \"{}\"",
            header.rng
        )));
    }

    let node_vocab = Vocab::from_full_list(header.node_vocab)?;
    let target_vocab = header.target_vocab.map(Vocab::from_full_list).transpose()?;
    let mut store = ParamStore::new();
    let model = Model::new(
        &mut store,
        header.config,
        node_vocab,
        target_vocab,
        header.relations,
    )?;

    let n = store.len();
    let mut filled = vec![[false; 3]; n];
    while r.pos < body.len() {
        let name = r.string()?;
        let data = r.f64_array()?;
        let (pid, idx) = match resolve(&store, &name)? {
            Slot::Value(p) => (p, 0),
            Slot::AdamM(p) => (p, 1),
            Slot::AdamV(p) => (p, 2),
        };
        if filled[pid][idx] {
            return Err(Error::Checkpoint(format!("duplicate array \"{name}\"")));
        }
        filled[pid][idx] = true;
        let param = store.get_mut(pid);
        let expect = param.tensor.numel();
        if data.len() != expect {
            return Err(Error::Checkpoint(format!(
                "array \"{name}\" holds {} values, model expects {expect}",
                data.len()
            )));
        }
        match idx {
            0 => param.tensor.data_mut().copy_from_slice(&data),
            1 => param.adam_m = data,
            2 => param.adam_v = data,
            _ => unreachable!(),
        }
    }
    for (pid, flags) in filled.iter().enumerate() {
        if flags.iter().any(|f| !f) {
            return Err(Error::Checkpoint(format!(
                "checkpoint is missing arrays for \"{}\"",
                store.get(pid).name
            )));
        }
    }

    Ok(TrainedModel {
        model,
        store,
        step: header.step,
    })
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    load_bytes(&std::fs::read(path)?)
}
