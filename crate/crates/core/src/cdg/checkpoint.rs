//! `CDG1` checkpoints: magic, `u32` array count, then for each array
//! `u32 rows, u32 cols` and row-major little-endian `f32` values.

use std::fs;
use std::path::Path;

use super::{CdgConfig, CdgModel};
use crate::lmkb_core::nn::{Matrix, Params};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDG1";

fn arrays(model: &CdgModel) -> Vec<&Matrix> {
    let mut v = vec![&model.table.e_word];
    v.extend(model.params.tensors());
    v.extend(model.backbone.params.tensors());
    v
}

fn arrays_mut(model: &mut CdgModel) -> Vec<&mut Matrix> {
    let mut v = vec![&mut model.table.e_word];
    v.extend(model.params.tensors_mut());
    v.extend(model.backbone.params.tensors_mut());
    v
}

pub fn encode_checkpoint(model: &CdgModel) -> Vec<u8> {
    let arrs = arrays(model);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(arrs.len() as u32).to_le_bytes());
    for m in arrs {
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn save_checkpoint(model: &CdgModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated: need {n} bytes, {} remain", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Rebuilds a model of shape `config` from checkpoint bytes.
pub fn decode_checkpoint(bytes: &[u8], config: &CdgConfig) -> Result<CdgModel> {
    let mut model = CdgModel::new(config.clone())?;
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, expected CDG1".into() });
    }
    let count_at = rd.pos as u64;
    let count = rd.u32()? as usize;
    let mut targets = arrays_mut(&mut model);
    if count != targets.len() {
        return Err(Error::Format {
            offset: count_at,
            msg: format!("checkpoint has {count} arrays, model expects {}", targets.len()),
        });
    }
    for (i, m) in targets.iter_mut().enumerate() {
        let at = rd.pos as u64;
        let (rows, cols) = (rd.u32()? as usize, rd.u32()? as usize);
        if (rows, cols) != m.shape() {
            return Err(Error::Format {
                offset: at,
                msg: format!("array {i} is {rows}x{cols}, model expects {:?}", m.shape()),
            });
        }
        let raw = rd.take(rows * cols * 4)?;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            m[(k / cols, k % cols)] = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if rd.pos != bytes.len() {
        return Err(Error::Format {
            offset: rd.pos as u64,
            msg: format!("{} trailing bytes", bytes.len() - rd.pos),
        });
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path, config: &CdgConfig) -> Result<CdgModel> {
    decode_checkpoint(&fs::read(path)?, config)
}
