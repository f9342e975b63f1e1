//! Binary matrix format: `rows: u64`, `cols: u64`, then `rows * cols`
//! row-major `f64` values, all little-endian. Several matrices may follow
//! each other in one stream.

use std::io::{Read, Write};

use faer::{Mat, MatRef};

use crate::error::{Error, Result};

/// Guard against absurd headers in corrupt files (about 8 GB of payload).
const MAX_ELEMENTS: u64 = 1 << 30;

pub fn write_matrix<W: Write>(out: &mut W, rows: usize, cols: usize, row_major: &[f64]) -> Result<()> {
    crate::error::check_len("matrix payload", rows * cols, row_major.len())?;
    out.write_all(&(rows as u64).to_le_bytes())?;
    out.write_all(&(cols as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(row_major.len() * 8);
    for v in row_major {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads one matrix; `offset` tracks the stream position for diagnostics.
pub fn read_matrix<R: Read>(input: &mut R, offset: &mut u64) -> Result<(usize, usize, Vec<f64>)> {
    let rows = read_u64(input, offset)?;
    let cols = read_u64(input, offset)?;
    let count = rows.checked_mul(cols).filter(|&c| c <= MAX_ELEMENTS).ok_or_else(|| Error::Parse {
        offset: *offset - 16,
        message: format!("implausible matrix header {rows} x {cols}"),
    })?;
    let mut buf = vec![0u8; count as usize * 8];
    input.read_exact(&mut buf).map_err(|_| Error::Parse {
        offset: *offset,
        message: format!("truncated payload for a {rows} x {cols} matrix"),
    })?;
    *offset += buf.len() as u64;
    let data = buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok((rows as usize, cols as usize, data))
}

fn read_u64<R: Read>(input: &mut R, offset: &mut u64) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(|_| Error::Parse {
        offset: *offset,
        message: "unexpected end of file in matrix header".into(),
    })?;
    *offset += 8;
    Ok(u64::from_le_bytes(b))
}

pub fn to_row_major(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}

pub fn write_mat<W: Write>(out: &mut W, m: MatRef<'_, f64>) -> Result<()> {
    write_matrix(out, m.nrows(), m.ncols(), &to_row_major(m))
}

pub fn read_mat<R: Read>(input: &mut R, offset: &mut u64) -> Result<Mat<f64>> {
    let (rows, cols, data) = read_matrix(input, offset)?;
    Ok(from_row_major(rows, cols, &data))
}

/// Plain CSV dump, one matrix row per line, no header.
pub fn write_csv<W: Write>(out: &mut W, m: MatRef<'_, f64>) -> Result<()> {
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:e}", m[(i, j)]));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
