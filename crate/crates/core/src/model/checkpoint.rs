//! Checkpoint file layout (integers little-endian):
//!
//! ```text
//! magic "ASCKPT" | u32 header length | JSON header | per tensor: u32 name length, name, grid
//! ```
//!
//! The JSON header carries the format version, the architecture, the init
//! seed and the ordered tensor names. Tensors use the raw grid format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelParams, Network};
use crate::error::{Error, Result};
use crate::grid::{read_grid, write_grid};
use crate::nn::ParamStore;

const MAGIC: &[u8; 6] = b"ASCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    arch: ArchConfig,
    seed: u64,
    tensors: Vec<String>,
}

pub fn write_checkpoint<W: Write>(w: &mut W, params: &ModelParams) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        arch: params.arch.clone(),
        seed: params.seed,
        tensors: params.store.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (name, t) in params.store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_grid(w, t)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelParams> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a checkpoint file"));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut store = ParamStore::new();
    for expected in &header.tensors {
        let n = read_u32(r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("tensor name is not UTF-8"))?;
        if &name != expected {
            return Err(Error::format(format!("tensor '{name}' out of order, expected '{expected}'")));
        }
        store.push(name, read_grid(r)?);
    }
    Network::new(&header.arch)?.check(&store)?;
    Ok(ModelParams { arch: header.arch, seed: header.seed, store })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
