//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "PFNCKPT\0"
//! version      u32      = 1
//! config_len   u32
//! config       config_len bytes of JSON (ModelConfig)
//! config_hash  64 bytes ASCII hex SHA-256 of the config JSON
//! n_tensors    u32
//! per tensor:  name_len u16, name bytes, ndim u8, dims u32 * ndim, f64 * prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{init_model, ModelConfig, ModelParams};
use crate::error::{PfnError, Result};

const MAGIC: &[u8; 8] = b"PFNCKPT\0";
const VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| PfnError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let json = serde_json::to_vec(&params.config).expect("config serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(params.config.hash().as_bytes());
    let tensors = params.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, p) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(p.shape.len() as u8);
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

/// Loads a checkpoint, rejecting it unless it was written for `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_checkpoint_unchecked(path)?;
    let (want, found) = (expected.hash(), params.config.hash());
    if want != found {
        return Err(PfnError::ConfigMismatch {
            expected: want,
            found,
        });
    }
    Ok(params)
}

/// Loads a checkpoint with whatever config it embeds.
pub fn load_checkpoint_unchecked(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| PfnError::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| PfnError::io(path, e))?;
    let mut r = Cursor { bytes: &bytes, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(PfnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PfnError::Checkpoint(format!("unsupported version {version}")));
    }
    let json_len = r.u32()? as usize;
    let json = r.take(json_len)?;
    let config: ModelConfig = serde_json::from_slice(json)
        .map_err(|e| PfnError::Checkpoint(format!("config: {e}")))?;
    let stored_hash = std::str::from_utf8(r.take(64)?)
        .map_err(|_| PfnError::Checkpoint("config hash is not ASCII".into()))?
        .to_string();
    if stored_hash != config.hash() {
        return Err(PfnError::ConfigMismatch {
            expected: config.hash(),
            found: stored_hash,
        });
    }

    let mut params = init_model(&config)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(PfnError::Checkpoint(format!(
            "{count} tensors stored, architecture has {}",
            names.len()
        )));
    }
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let len = r.u16()? as usize;
        let stored = std::str::from_utf8(r.take(len)?)
            .map_err(|_| PfnError::Checkpoint("tensor name is not UTF-8".into()))?;
        if stored != name {
            return Err(PfnError::Checkpoint(format!("expected tensor {name}, found {stored}")));
        }
        let ndim = r.take(1)?[0] as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != slot.shape {
            return Err(PfnError::Checkpoint(format!(
                "{name}: stored shape {shape:?}, expected {:?}",
                slot.shape
            )));
        }
        for v in slot.data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(PfnError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PfnError::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}
