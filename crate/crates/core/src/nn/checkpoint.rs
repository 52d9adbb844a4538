//! Versioned binary network checkpoint. Little-endian throughout; f64
//! values are written as raw bits so a round trip is exact.
//!
//! Layout: magic `DKMC`, u32 version, u32 input width, f64 bn momentum,
//! f64 bn eps, u32 layer count, then one tagged record per layer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::network::{Layer, Network};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DKMC";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_DENSE: u8 = 0;
const TAG_BATCH_NORM: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_DROPOUT: u8 = 3;

pub fn save_checkpoint<P: AsRef<Path>>(path: P, net: &Network) -> Result<()> {
    let mut out = BufWriter::new(File::create(&path)?);
    write_checkpoint(&mut out, net)
}

pub fn write_checkpoint<W: Write>(out: &mut W, net: &Network) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(net.input_width() as u32).to_le_bytes())?;
    out.write_all(&net.bn_momentum.to_le_bytes())?;
    out.write_all(&net.bn_eps.to_le_bytes())?;
    out.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for layer in &net.layers {
        match layer {
            Layer::Dense { w, b } => {
                out.write_all(&[TAG_DENSE])?;
                out.write_all(&(w.rows() as u32).to_le_bytes())?;
                out.write_all(&(w.cols() as u32).to_le_bytes())?;
                write_f64s(out, w.data())?;
                write_f64s(out, b)?;
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                out.write_all(&[TAG_BATCH_NORM])?;
                out.write_all(&(gamma.len() as u32).to_le_bytes())?;
                write_f64s(out, gamma)?;
                write_f64s(out, beta)?;
                write_f64s(out, running_mean)?;
                write_f64s(out, running_var)?;
            }
            Layer::Relu => out.write_all(&[TAG_RELU])?,
            Layer::Dropout { rate } => {
                out.write_all(&[TAG_DROPOUT])?;
                out.write_all(&rate.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Network> {
    let mut reader = BufReader::new(File::open(&path)?);
    read_checkpoint(&mut reader).map_err(|e| match e {
        Error::Input(message) => Error::Ingestion {
            file: path.as_ref().display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn read_checkpoint<R: Read>(reader: &mut R) -> Result<Network> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Input("bad magic, expected DKMC".into()));
    }
    let version = read_u32(reader)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let input_width = read_u32(reader)? as usize;
    let bn_momentum = read_f64(reader)?;
    let bn_eps = read_f64(reader)?;
    let n_layers = read_u32(reader)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut tag = [0u8; 1];
        reader.read_exact(&mut tag)?;
        match tag[0] {
            TAG_DENSE => {
                let rows = read_u32(reader)? as usize;
                let cols = read_u32(reader)? as usize;
                let w = Matrix::from_vec(rows, cols, read_f64s(reader, rows * cols)?)?;
                let b = read_f64s(reader, cols)?;
                layers.push(Layer::Dense { w, b });
            }
            TAG_BATCH_NORM => {
                let width = read_u32(reader)? as usize;
                layers.push(Layer::BatchNorm {
                    gamma: read_f64s(reader, width)?,
                    beta: read_f64s(reader, width)?,
                    running_mean: read_f64s(reader, width)?,
                    running_var: read_f64s(reader, width)?,
                });
            }
            TAG_RELU => layers.push(Layer::Relu),
            TAG_DROPOUT => layers.push(Layer::Dropout {
                rate: read_f64(reader)?,
            }),
            other => return Err(Error::Input(format!("unknown layer tag {}", other))),
        }
    }
    Network::from_parts(input_width, layers, bn_momentum, bn_eps)
}

fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    reader.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(reader: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    reader.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(reader: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(reader)?);
    }
    Ok(out)
}
