//! Binary grid dump format shared by spectrograms and masks.
//!
//! Layout, all little-endian:
//!   magic  b"SFG1"
//!   kind   u32   (0 = real, 1 = complex)
//!   frames u64
//!   bins   u64
//!   data   row-major f64; complex grids store re,im per cell

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFG1";
const KIND_REAL: u32 = 0;
const KIND_COMPLEX: u32 = 1;

pub fn write_real_grid(grid: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_header(&mut file, KIND_REAL, grid.dim())?;
    for v in grid.iter() {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_real_grid(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut file = std::fs::File::open(path)?;
    let (kind, frames, bins) = read_header(&mut file)?;
    if kind != KIND_REAL {
        return Err(Error::MalformedGrid(format!(
            "holds kind {kind}, expected real"
        )));
    }
    let mut data = vec![0f64; frames * bins];
    read_f64s(&mut file, &mut data)?;
    Array2::from_shape_vec((frames, bins), data)
        .map_err(|e| Error::MalformedGrid(format!("shape: {e}")))
}

pub fn write_complex_grid(grid: &Array2<Complex64>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_header(&mut file, KIND_COMPLEX, grid.dim())?;
    for v in grid.iter() {
        file.write_all(&v.re.to_le_bytes())?;
        file.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_complex_grid(path: impl AsRef<Path>) -> Result<Array2<Complex64>> {
    let mut file = std::fs::File::open(path)?;
    let (kind, frames, bins) = read_header(&mut file)?;
    if kind != KIND_COMPLEX {
        return Err(Error::MalformedGrid(format!(
            "holds kind {kind}, expected complex"
        )));
    }
    let mut data = vec![0f64; frames * bins * 2];
    read_f64s(&mut file, &mut data)?;
    let cells: Vec<Complex64> = data
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    Array2::from_shape_vec((frames, bins), cells)
        .map_err(|e| Error::MalformedGrid(format!("shape: {e}")))
}

fn write_header(w: &mut impl Write, kind: u32, dim: (usize, usize)) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&(dim.0 as u64).to_le_bytes())?;
    w.write_all(&(dim.1 as u64).to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(u32, usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::MalformedGrid("bad magic".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let kind = u32::from_le_bytes(buf4);
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let frames = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8)?;
    let bins = u64::from_le_bytes(buf8) as usize;
    Ok((kind, frames, bins))
}

fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> Result<()> {
    let mut buf = [0u8; 8];
    for slot in out.iter_mut() {
        r.read_exact(&mut buf)?;
        *slot = f64::from_le_bytes(buf);
    }
    Ok(())
}
