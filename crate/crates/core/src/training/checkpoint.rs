//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DCANCKPT"
//! version    u32
//! header     u64 length + UTF-8 JSON (model config, train config, labels, counters)
//! tensors    u32 count, then per tensor:
//!            u32 name length, name, u8 dtype (1 = f64), u32 rank, u64 dims…, payload
//! checksum   32-byte SHA-256 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{AdamHyper, AdamState};
use super::trainer::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::model::{Dcan, ModelConfig, ModelParams};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 8] = b"DCANCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    labels: Vec<String>,
    adam: AdamHyper,
    epoch: usize,
    best_epoch: usize,
    best_score: f64,
    stale: usize,
}

/// A model together with the training state and label names it was saved with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub train_config: TrainConfig,
    pub labels: Vec<String>,
}

impl Checkpoint {
    pub fn model(&self) -> &Dcan {
        &self.state.model
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let st = &self.state;
        let header = Header {
            model: st.model.config.clone(),
            train: self.train_config.clone(),
            labels: self.labels.clone(),
            adam: st.adam.hyper,
            epoch: st.epoch,
            best_epoch: st.best_epoch,
            best_score: st.best_score,
            stale: st.stale,
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::from)?;

        let named = st.model.params.named();
        if st.adam.mom1.len() != named.len() {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&((named.len() * 3) as u32).to_le_bytes());
        for (name, t) in &named {
            write_tensor(&mut out, &format!("param/{name}"), t.shape(), t.data());
        }
        for (i, (name, t)) in named.iter().enumerate() {
            write_tensor(&mut out, &format!("adam.mom1/{name}"), t.shape(), &st.adam.mom1[i]);
            write_tensor(&mut out, &format!("adam.mom2/{name}"), t.shape(), &st.adam.mom2[i]);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let min = MAGIC.len() + 4 + 8 + 4 + CHECKSUM_LEN;
        if bytes.len() < min {
            return Err(Error::parse(
                format!("byte {}", bytes.len()),
                "file too short to be a checkpoint",
            ));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::parse("byte 0", "bad magic bytes"));
        }
        let body_len = bytes.len() - CHECKSUM_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        if digest.as_slice() != &bytes[body_len..] {
            return Err(Error::parse(
                format!("byte {body_len}"),
                "checksum mismatch (truncated or corrupt file)",
            ));
        }
        let mut r = Reader {
            buf: &bytes[..body_len],
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::parse("byte 8", format!("unsupported format version {version}")));
        }
        let json_len = r.u64()? as usize;
        let header_pos = r.pos;
        let header: Header = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::parse(format!("byte {header_pos}"), e.to_string()))?;
        header.model.validate()?;

        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let (name, t) = r.tensor()?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::parse(format!("byte {at}"), format!("duplicate tensor {name}")));
            }
        }
        if r.pos != body_len {
            return Err(Error::parse(format!("byte {}", r.pos), "trailing bytes after tensors"));
        }

        let mut params = BTreeMap::new();
        let mut mom1 = BTreeMap::new();
        let mut mom2 = BTreeMap::new();
        for (name, t) in tensors {
            let (group, key) = name
                .split_once('/')
                .ok_or_else(|| Error::parse("tensors", format!("unqualified tensor name {name}")))?;
            let dst = match group {
                "param" => &mut params,
                "adam.mom1" => &mut mom1,
                "adam.mom2" => &mut mom2,
                _ => return Err(Error::parse("tensors", format!("unknown tensor group {group}"))),
            };
            dst.insert(key.to_string(), t);
        }
        let params = ModelParams::from_named(&header.model, params)?;
        let order: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let take = |map: &mut BTreeMap<String, Tensor>, what: &str| -> Result<Vec<Vec<f64>>> {
            let v = order
                .iter()
                .map(|n| {
                    map.remove(n)
                        .map(Tensor::into_data)
                        .ok_or_else(|| Error::parse("tensors", format!("missing {what}/{n}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(extra) = map.keys().next() {
                return Err(Error::parse("tensors", format!("unexpected {what}/{extra}")));
            }
            Ok(v)
        };
        let adam = AdamState {
            hyper: header.adam,
            mom1: take(&mut mom1, "adam.mom1")?,
            mom2: take(&mut mom2, "adam.mom2")?,
        };
        Ok(Checkpoint {
            state: TrainState {
                model: Dcan {
                    config: header.model,
                    params,
                },
                adam,
                epoch: header.epoch,
                best_epoch: header.best_epoch,
                best_score: header.best_score,
                stale: header.stale,
            },
            train_config: header.train,
            labels: header.labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Errors unless this checkpoint can continue training with `model` and `labels`.
    pub fn check_compatible(&self, model: &ModelConfig, labels: &[String]) -> Result<()> {
        if &self.state.model.config != model {
            return Err(Error::Config(
                "checkpoint model config differs from the requested config".into(),
            ));
        }
        if self.labels != labels {
            return Err(Error::Config(
                "checkpoint label space differs from the dataset label space".into(),
            ));
        }
        Ok(())
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::parse(format!("byte {}", self.pos), format!("need {n} more bytes")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let at = self.pos;
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| Error::parse(format!("byte {at}"), "tensor name is not UTF-8"))?
            .to_string();
        let dtype = self.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::parse(format!("byte {}", self.pos - 1), format!("unknown dtype {dtype}")));
        }
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::parse(format!("byte {at}"), "tensor size overflows"))?;
        let bytes = self.take(numel.saturating_mul(8))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::parse(format!("byte {at}"), e.to_string()))?;
        Ok((name, t))
    }
}
