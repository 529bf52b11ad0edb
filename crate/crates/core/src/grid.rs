//! Raw 2-D grid file format shared by score pages, spectrograms and
//! checkpoint tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       6     magic "NPYISH"
//! 6       1     format version (1)
//! 7       1     element type (1 = f32 little-endian)
//! 8       4     ndim (u32, always 2)
//! 12      8*nd  dims (u64 each, rows then cols)
//! ..      4*n   row-major payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Row-major grid of 32-bit floats.
pub type Grid = Array2<f32>;

const MAGIC: &[u8; 6] = b"NPYISH";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;

pub fn write_grid<W: Write>(w: &mut W, grid: &Grid) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32])?;
    w.write_all(&2u32.to_le_bytes())?;
    let (rows, cols) = grid.dim();
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(rows * cols * 4);
    for v in grid.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid<R: Read>(r: &mut R) -> Result<Grid> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..6] != MAGIC {
        return Err(Error::format("bad grid magic"));
    }
    if head[6] != VERSION {
        return Err(Error::format(format!("unsupported grid version {}", head[6])));
    }
    if head[7] != DTYPE_F32 {
        return Err(Error::format(format!("unsupported element type {}", head[7])));
    }
    let ndim = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if ndim != 2 {
        return Err(Error::format(format!("expected 2 dims, found {ndim}")));
    }
    let mut dims = [0u8; 16];
    r.read_exact(&mut dims)?;
    let rows = u64::from_le_bytes(dims[..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(dims[8..].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|n| *n < (1 << 34))
        .ok_or_else(|| Error::format("grid dims overflow"))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::format(e.to_string()))
}

pub fn save_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let mut r = BufReader::new(File::open(path)?);
    read_grid(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &g).unwrap();
        assert_eq!(&buf[..6], b"NPYISH");
        assert_eq!(buf[7], 1);
        assert_eq!(buf.len(), 12 + 16 + 24);
        assert_eq!(&buf[28..32], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        let mut bad: &[u8] = b"NOTAGRIDxxxxxxxxxxxxxxxxxxxxx";
        assert!(matches!(read_grid(&mut bad), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 1usize..8, cols in 1usize..8, seed in any::<u32>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff))
                .collect();
            let g = Array2::from_shape_vec((rows, cols), data).unwrap();
            let mut buf = Vec::new();
            write_grid(&mut buf, &g).unwrap();
            let back = read_grid(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(g.shape(), back.shape());
            for (a, b) in g.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
