//! Embedding store: a flat binary file plus a JSON metadata sidecar.
//!
//! ```text
//! offset  size  field
//! 0       6     magic "ASEMBD"
//! 6       1     format version (1)
//! 7       1     modality (0 = sheet, 1 = audio)
//! 8       4     dim (u32)
//! 12      8     count (u64)
//! 20      4*n   f32 little-endian, row-major
//! ```
//!
//! The sidecar `<file>.json` holds one metadata record per row.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingIndex, EntryMeta};
use crate::error::{Error, Result};
use crate::model::Modality;

const MAGIC: &[u8; 6] = b"ASEMBD";
pub const STORE_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u8,
    modality: Modality,
    dim: usize,
    count: usize,
    entries: Vec<EntryMeta>,
}

fn modality_tag(m: Modality) -> u8 {
    match m {
        Modality::Sheet => 0,
        Modality::Audio => 1,
    }
}

fn store_modality(index: &EmbeddingIndex) -> Result<Modality> {
    let m = index.meta(0).modality;
    if index.metas().iter().any(|e| e.modality != m) {
        return Err(Error::arg("an embedding store holds a single modality"));
    }
    Ok(m)
}

pub fn write_store<W: Write>(w: &mut W, index: &EmbeddingIndex) -> Result<()> {
    let m = store_modality(index)?;
    w.write_all(MAGIC)?;
    w.write_all(&[STORE_VERSION, modality_tag(m)])?;
    w.write_all(&(index.dim() as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    for v in index.raw_data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the binary part; metadata comes from `entries`.
pub fn read_store<R: Read>(r: &mut R, entries: Vec<EntryMeta>) -> Result<EmbeddingIndex> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head)?;
    if &head[..6] != MAGIC {
        return Err(Error::format("not an embedding store"));
    }
    if head[6] != STORE_VERSION {
        return Err(Error::format(format!("unsupported store version {}", head[6])));
    }
    let modality = match head[7] {
        0 => Modality::Sheet,
        1 => Modality::Audio,
        t => return Err(Error::format(format!("unknown modality tag {t}"))),
    };
    let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    if count == 0 || dim == 0 {
        return Err(Error::format("empty embedding store"));
    }
    if entries.len() != count || entries.iter().any(|e| e.modality != modality) {
        return Err(Error::format("metadata does not match the store header"));
    }
    let mut bytes = vec![0u8; dim * count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(EmbeddingIndex::from_raw_parts(dim, data, entries))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_store(path: impl AsRef<Path>, index: &EmbeddingIndex) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_store(&mut w, index)?;
    w.flush()?;
    let side = Sidecar {
        version: STORE_VERSION,
        modality: store_modality(index)?,
        dim: index.dim(),
        count: index.len(),
        entries: index.metas().to_vec(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    let path = path.as_ref();
    let side: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if side.count != side.entries.len() {
        return Err(Error::format("sidecar count disagrees with its entries"));
    }
    let index = read_store(&mut BufReader::new(File::open(path)?), side.entries)?;
    if index.dim() != side.dim {
        return Err(Error::format("sidecar dimension disagrees with the store"));
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Embedding;
    use crate::retrieval::build_index;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = rng::rng(1);
        let idx = build_index((0..7).map(|i| {
            let v: Vec<f64> = (0..32).map(|_| r.gen_range(-1.0..1.0)).collect();
            let m = EntryMeta { piece_id: format!("piece_{i}"), offset: i * 3, modality: Modality::Audio };
            (Embedding::from_f64(&v).unwrap(), m)
        }))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("audio.emb");
        save_store(&p, &idx).unwrap();
        let back = load_store(&p).unwrap();
        assert_eq!(back, idx);
        let a: Vec<u32> = idx.raw_data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.raw_data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"ASEMBD");
        assert_eq!(bytes.len(), 20 + 7 * 32 * 4);
    }

    #[test]
    fn mixed_modalities_rejected() {
        let e = Embedding::from_f64(&[1.0; 32]).unwrap();
        let idx = build_index([
            (e.clone(), EntryMeta { piece_id: "a".into(), offset: 0, modality: Modality::Sheet }),
            (e, EntryMeta { piece_id: "a".into(), offset: 0, modality: Modality::Audio }),
        ])
        .unwrap();
        assert!(write_store(&mut Vec::new(), &idx).is_err());
    }
}
