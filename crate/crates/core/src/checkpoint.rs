//! Checkpoint container: the experiment config snapshot plus every parameter
//! tensor, each stored as a feature-style float32 matrix block.
//!
//! Layout (little-endian): magic `MMPC`, version u32, config length u32,
//! config text, tensor count u32, then per tensor a name length u32, the
//! UTF-8 name and one matrix block.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::data_io::{read_matrix_block, write_atomic, write_matrix_block};
use crate::error::{Error, Result};
use crate::model::MmPyramid;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMPC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, x: usize) {
    buf.extend_from_slice(&(x as u32).to_le_bytes());
}

pub fn encode_checkpoint(config: &ExperimentConfig, model: &MmPyramid) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = config.to_text();
    put_u32(&mut buf, text.len());
    buf.extend_from_slice(text.as_bytes());
    put_u32(&mut buf, model.store.len());
    for (name, value) in model.store.iter() {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        write_matrix_block(&mut buf, &value.mapv(|x| x as f32)).expect("writing to memory");
    }
    buf
}

pub fn save_checkpoint(path: &Path, config: &ExperimentConfig, model: &MmPyramid) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config, model))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<(ExperimentConfig, MmPyramid)> {
    let mut r = Cursor::new(bytes);
    let word = |r: &mut Cursor<&[u8]>| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = word(&mut r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = word(&mut r)?;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|_| bad("truncated config"))?;
    let text = String::from_utf8(text).map_err(|_| bad("config is not UTF-8"))?;
    let config = ExperimentConfig::parse(&text)?;
    let mut model = MmPyramid::new(config.model_config()?, config.seed)?;

    let count = word(&mut r)?;
    if count != model.store.len() {
        return Err(bad(format!(
            "{count} tensors stored, model has {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let n = word(&mut r)?;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let values = read_matrix_block(&mut r, origin)?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| bad(format!("unknown tensor `{name}`")))?;
        let slot = model.store.get_mut(id);
        if slot.dim() != values.dim() {
            return Err(bad(format!(
                "tensor `{name}` is {:?}, model expects {:?}",
                values.dim(),
                slot.dim()
            )));
        }
        *slot = values.mapv(f64::from);
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((config, model))
}

pub fn load_checkpoint(path: &Path) -> Result<(ExperimentConfig, MmPyramid)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Round every parameter to float32, as a checkpoint round trip would.
pub fn quantize(model: &mut MmPyramid) {
    for v in model.store.values_mut() {
        v.mapv_inplace(|x| f64::from(x as f32));
    }
}
