//! On-disk matrix formats.
//!
//! Square kernel/distance tables are exchanged either as headerless CSV
//! (n rows of n comma-separated reals) or as a binary file: magic `DKMK`,
//! little-endian u32 n, then n*n little-endian f64 row-major. Rectangular
//! matrices (embeddings) use the same encoding with magic `DKME` and
//! explicit row/column counts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const KERNEL_MAGIC: &[u8; 4] = b"DKMK";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"DKME";

fn ingestion<P: AsRef<Path>>(path: P, message: impl Into<String>) -> Error {
    Error::Ingestion {
        file: path.as_ref().display().to_string(),
        message: message.into(),
    }
}

/// Headerless CSV, each line one row of comma-separated reals.
pub fn read_csv_matrix<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let text = std::fs::read_to_string(&path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                ingestion(&path, format!("row {}: unparseable value {:?}", lineno + 1, field))
            })?;
            if !v.is_finite() {
                return Err(ingestion(&path, format!("row {}: non-finite value", lineno + 1)));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ingestion(&path, "empty file"));
    }
    let cols = rows[0].len();
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(ingestion(&path, format!("row {}: ragged row length", i + 1)));
    }
    Matrix::from_rows(&rows)
}

pub fn write_csv_matrix<P: AsRef<Path>>(path: P, m: &Matrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(&path)?);
    for i in 0..m.rows() {
        let line = m
            .row(i)
            .iter()
            .map(|v| format!("{:?}", v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{}", line)?;
    }
    Ok(())
}

/// Square binary table (`DKMK`).
pub fn read_kernel_binary<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let mut reader = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != KERNEL_MAGIC {
        return Err(ingestion(&path, "bad magic, expected DKMK"));
    }
    let mut nb = [0u8; 4];
    reader.read_exact(&mut nb)?;
    let n = u32::from_le_bytes(nb) as usize;
    read_f64_table(&mut reader, n, n, &path)
}

pub fn write_kernel_binary<P: AsRef<Path>>(path: P, m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape("DKMK format stores square matrices".into()));
    }
    let mut out = BufWriter::new(File::create(&path)?);
    out.write_all(KERNEL_MAGIC)?;
    out.write_all(&(m.rows() as u32).to_le_bytes())?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Rectangular binary table (`DKME`).
pub fn read_embedding_binary<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let mut reader = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(ingestion(&path, "bad magic, expected DKME"));
    }
    let mut b = [0u8; 4];
    reader.read_exact(&mut b)?;
    let rows = u32::from_le_bytes(b) as usize;
    reader.read_exact(&mut b)?;
    let cols = u32::from_le_bytes(b) as usize;
    read_f64_table(&mut reader, rows, cols, &path)
}

pub fn write_embedding_binary<P: AsRef<Path>>(path: P, m: &Matrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(&path)?);
    out.write_all(EMBEDDING_MAGIC)?;
    out.write_all(&(m.rows() as u32).to_le_bytes())?;
    out.write_all(&(m.cols() as u32).to_le_bytes())?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64_table<R: Read, P: AsRef<Path>>(
    reader: &mut R,
    rows: usize,
    cols: usize,
    path: P,
) -> Result<Matrix> {
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for (idx, slot) in data.iter_mut().enumerate() {
        reader.read_exact(&mut buf).map_err(|_| {
            ingestion(&path, format!("truncated table at value {} of {}", idx, rows * cols))
        })?;
        *slot = f64::from_le_bytes(buf);
    }
    Matrix::from_vec(rows, cols, data)
}

/// One integer label per line, 0-indexed, aligned with matrix rows.
pub fn read_labels<P: AsRef<Path>>(path: P) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(&path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line.parse().map_err(|_| {
            ingestion(&path, format!("line {}: unparseable label {:?}", lineno + 1, line))
        })?;
        labels.push(v);
    }
    if labels.is_empty() {
        return Err(ingestion(&path, "no labels found"));
    }
    Ok(labels)
}

pub fn write_labels<P: AsRef<Path>>(path: P, labels: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(&path)?);
    for l in labels {
        writeln!(out, "{}", l)?;
    }
    Ok(())
}
