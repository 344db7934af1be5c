//! Versioned binary checkpoint: a little-endian key→array map with an
//! embedded JSON config blob and per-entry shape manifest.
//!
//! Layout: magic `CPLN`, u32 version, u32 config length + bytes, u32 entry
//! count, then per entry: u32 name length + bytes, u32 ndim, u32 dims,
//! f64 data.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::{NumericsError, Tensor};

const MAGIC: &[u8; 4] = b"CPLN";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub config_json: String,
    pub params: ParamStore,
}

pub fn save_checkpoint(
    path: &Path,
    config_json: &str,
    params: &ParamStore,
) -> Result<(), NumericsError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &d in &tensor.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NumericsError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let cfg_len = cur.u32()? as usize;
    let config_json = String::from_utf8(cur.take(cfg_len)?.to_vec())
        .map_err(|e| NumericsError::Checkpoint(format!("config is not utf-8: {e}")))?;
    let count = cur.u32()? as usize;

    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| NumericsError::Checkpoint(format!("name is not utf-8: {e}")))?;
        let ndim = cur.u32()? as usize;
        if ndim == 0 || ndim > 4 {
            return Err(NumericsError::Checkpoint(format!("bad ndim {ndim} for {name}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let raw = cur.take(8)?;
            data.push(f64::from_le_bytes(raw.try_into().unwrap()));
        }
        let t = Tensor::new(shape, data);
        params.register_with(&name, t.rows(), t.cols(), t.data);
    }
    Ok(Checkpoint { config_json, params })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        if self.pos + n > self.bytes.len() {
            return Err(NumericsError::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        let raw = self.take(4)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    }
}
