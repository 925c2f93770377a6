//! Little-endian primitives for the binary file sections.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::Matrix;

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Length-prefixed array of reals.
pub fn write_vec<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    write_u64(w, vs.len() as u64)?;
    write_f64s(w, vs)
}

/// Row count, column count, then column-major entries.
pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    write_f64s(w, m.as_slice())
}

pub fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn eof(what: &str) -> Error {
    Error::Format(format!("unexpected end of input while reading {what}"))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| eof("integer"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_usize<R: Read>(r: &mut R, limit: usize, what: &str) -> Result<usize> {
    let v = read_u64(r)?;
    if v > limit as u64 {
        return Err(Error::Format(format!("{what} = {v} exceeds limit {limit}")));
    }
    Ok(v as usize)
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| eof("real"))?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?];
    r.read_exact(&mut buf).map_err(|_| eof("real array"))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

const MAX_ELEMS: usize = 1 << 34;

pub fn read_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_usize(r, MAX_ELEMS, "array length")?;
    read_f64s(r, n)
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let rows = read_usize(r, MAX_ELEMS, "row count")?;
    let cols = read_usize(r, MAX_ELEMS, "column count")?;
    let n =
        rows.checked_mul(cols).filter(|&n| n <= MAX_ELEMS).ok_or_else(|| Error::Format("matrix too large".into()))?;
    Ok(Matrix::from_vec(rows, cols, read_f64s(r, n)?))
}

pub fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_usize(r, 1 << 30, "byte section length")?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| eof("byte section"))?;
    Ok(buf)
}

/// Read one `\n`-terminated ASCII line (without the terminator).
pub fn read_line<R: Read>(r: &mut R, max: usize) -> Result<String> {
    let mut out = Vec::new();
    let mut b = [0u8; 1];
    loop {
        r.read_exact(&mut b).map_err(|_| eof("header line"))?;
        if b[0] == b'\n' {
            break;
        }
        out.push(b[0]);
        if out.len() > max {
            return Err(Error::Format("header line too long".into()));
        }
    }
    String::from_utf8(out).map_err(|_| Error::Format("header is not ASCII".into()))
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8]) -> Result<()> {
    let mut b = vec![0u8; magic.len()];
    r.read_exact(&mut b).map_err(|_| eof("magic bytes"))?;
    if b != magic {
        return Err(Error::Format(format!("bad magic bytes: expected {:?}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}
