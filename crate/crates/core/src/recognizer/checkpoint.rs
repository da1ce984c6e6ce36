//! Binary parameter container.
//!
//! Layout (little endian): magic `CERHVCKP`, `u32` version, `u32` length plus
//! JSON config echo, `u32` tensor count, then per tensor a `u16` name length,
//! the UTF-8 name, `u8` kind (0 parameter, 1 buffer), `u8` dtype (0 = f32),
//! `u8` rank, `u64` dims and raw f32 values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Crnn, ModelConfig, ModelError};
use crate::ctc::Alphabet;
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"CERHVCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    alphabet: Alphabet,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn write_tensor(out: &mut Vec<u8>, kind: u8, t: &Tensor) {
    let name = t.name.as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&[kind, 0, t.shape.len() as u8]);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Crnn {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            model: self.config().clone(),
            alphabet: self.alphabet().clone(),
        })
        .expect("config serializes");
        let store = self.params();
        let mut out = Vec::with_capacity(64 + header.len() + 4 * store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let count = store.params().len() + store.buffers().len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for t in store.params() {
            write_tensor(&mut out, 0, t);
        }
        for t in store.buffers() {
            write_tensor(&mut out, 1, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| bad(format!("config echo: {e}")))?;
        let mut model = Crnn::new(header.model, header.alphabet, 0)?;
        let count = r.u32()? as usize;
        let store = model.params_mut();
        if count != store.params().len() + store.buffers().len() {
            return Err(bad(format!("tensor count {count} does not match the architecture")));
        }
        let n_params = store.params().len();
        for i in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let kind = r.u8()?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let (expected_kind, slot) = if i < n_params {
                (0, &mut store.params_mut()[i])
            } else {
                (1, &mut store.buffers_mut()[i - n_params])
            };
            if kind != expected_kind || dtype != 0 || slot.name != name || slot.shape != shape {
                return Err(bad(format!(
                    "tensor {i} is {name} {shape:?} (kind {kind}, dtype {dtype}); expected {} {:?}",
                    slot.name, slot.shape
                )));
            }
            let raw = r.take(4 * slot.data.len())?;
            for (dst, chunk) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(model: &Crnn, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&model.to_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint. When `expected` is given, the stored architecture and
/// alphabet must match it exactly.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<(&ModelConfig, &Alphabet)>,
) -> Result<Crnn, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let model = Crnn::from_bytes(&bytes)?;
    if let Some((config, alphabet)) = expected {
        if model.config() != config {
            return Err(bad(format!(
                "config mismatch: checkpoint has {:?}, expected {:?}",
                model.config(),
                config
            )));
        }
        if model.alphabet() != alphabet {
            return Err(bad("alphabet mismatch"));
        }
    }
    Ok(model)
}
