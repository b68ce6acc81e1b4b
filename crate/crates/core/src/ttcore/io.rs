//! Binary tensor-train container.
//!
//! Layout: 8 magic bytes, `u64 d`, then `d` triples `(r_{j-1}, n_j, r_j)` as
//! `u64`, then every core's entries as little-endian `f64` (re, im) pairs with
//! the left bond varying slowest and the right bond fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use num_complex::Complex64 as C64;

use super::{TensorTrain, TtError, MAX_ORDER};

pub const TT_MAGIC: &[u8; 8] = b"BIFTT001";

/// Refuse headers that would allocate more than this many complex entries.
const MAX_ENTRIES: u64 = 1 << 32;

pub fn write_tt<W: Write>(tt: &TensorTrain, mut w: W) -> Result<(), TtError> {
    w.write_all(TT_MAGIC)?;
    w.write_all(&(tt.order() as u64).to_le_bytes())?;
    for core in tt.cores() {
        let (a, n, b) = core.dim();
        for v in [a, n, b] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
    }
    for core in tt.cores() {
        // iterating a standard-layout Array3 walks (a, i, b) in row-major order
        for z in core.iter() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TtError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, TtError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_tt<R: Read>(mut r: R) -> Result<TensorTrain, TtError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TT_MAGIC {
        return Err(TtError::Format(format!("bad magic {magic:?}")));
    }
    let d = read_u64(&mut r)?;
    if d == 0 || d > MAX_ORDER as u64 {
        return Err(TtError::Format(format!("order {d} out of range")));
    }
    let mut shapes = Vec::with_capacity(d as usize);
    let mut total: u64 = 0;
    for _ in 0..d {
        let (a, n, b) = (read_u64(&mut r)?, read_u64(&mut r)?, read_u64(&mut r)?);
        let len = a
            .checked_mul(n)
            .and_then(|x| x.checked_mul(b))
            .ok_or_else(|| TtError::Format("core size overflows".into()))?;
        total = total.saturating_add(len);
        if total > MAX_ENTRIES {
            return Err(TtError::Format(format!("header declares more than {MAX_ENTRIES} entries")));
        }
        shapes.push((a as usize, n as usize, b as usize));
    }
    let mut cores = Vec::with_capacity(shapes.len());
    for (a, n, b) in shapes {
        let mut data = Vec::with_capacity(a * n * b);
        for _ in 0..a * n * b {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            data.push(C64::new(re, im));
        }
        cores.push(Array3::from_shape_vec((a, n, b), data).expect("length matches shape"));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(TtError::Format("trailing bytes after last core".into()));
    }
    TensorTrain::from_cores(cores).map_err(|e| TtError::Format(e.to_string()))
}

pub fn write_tt_file(tt: &TensorTrain, path: &Path) -> Result<(), TtError> {
    write_tt(tt, BufWriter::new(File::create(path)?))
}

pub fn read_tt_file(path: &Path) -> Result<TensorTrain, TtError> {
    read_tt(BufReader::new(File::open(path)?))
}
