//! Binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! | bytes | content                                             |
//! |-------|-----------------------------------------------------|
//! | 8     | magic `CRWDCKPT`                                    |
//! | 4     | format version (`u32`, currently 1)                 |
//! | 4     | header length `h` (`u32`)                           |
//! | h     | JSON header: layout descriptor and extra sections   |
//! | 8·n   | `n` parameters as `f64`                             |
//!
//! Values are stored bit-for-bit, so `load(save(p)) == p` exactly.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::{layout, Block, PolicyParams};

const MAGIC: &[u8; 8] = b"CRWDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("layout in file does not match this network")]
    LayoutMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    layout: Vec<Block>,
    param_count: usize,
    sections: BTreeMap<String, serde_json::Value>,
}

/// Parameters plus named JSON sections (training progress, curriculum).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub sections: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(params: PolicyParams) -> Self {
        Checkpoint { params, sections: BTreeMap::new() }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let header = Header { layout: layout(), param_count: ckpt.params.len(), sections: ckpt.sections.clone() };
    let header = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(ckpt.params.len() * 8);
    for v in &ckpt.params.values {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    r.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.layout != layout() || header.param_count != super::param_count() {
        return Err(CheckpointError::LayoutMismatch);
    }
    let mut body = vec![0u8; header.param_count * 8];
    r.read_exact(&mut body)?;
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Checkpoint { params: PolicyParams { values }, sections: header.sections })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(io::BufReader::new(std::fs::File::open(path)?))
}
