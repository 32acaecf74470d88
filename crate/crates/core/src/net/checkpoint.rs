//! Flat little-endian checkpoint: magic `WLAB`, version `u32`, then `m`, `L`,
//! `d`, `t` as `u64`, then every weight block row-major in layer order, then
//! the biases that exist, in layer order.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::Network;
use crate::error::{Error, Result};
use crate::params::ParamSpec;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WLAB";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Truncated(what))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated(what))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

impl Network {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [self.width as u64, self.depth() as u64, self.input_dim as u64, self.step] {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in &self.weights {
            for j in 0..m.nrows() {
                for q in 0..m.ncols() {
                    w.write_all(&m[(j, q)].to_le_bytes())?;
                }
            }
        }
        for b in self.biases.iter().flatten() {
            for v in b.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Restores a network written by [`Network::write_checkpoint`]. The
    /// spec and output count are not part of the file and must match.
    pub fn read_checkpoint<R: Read>(mut r: R, spec: &ParamSpec, outputs: usize, seed: u64) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Truncated("checkpoint magic"))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Magic { expected: u32::from_be_bytes(CHECKPOINT_MAGIC), found: u32::from_be_bytes(magic) });
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v).map_err(|_| Error::Truncated("checkpoint version"))?;
        let version = u32::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let width = read_u64(&mut r, "checkpoint header")? as usize;
        let depth = read_u64(&mut r, "checkpoint header")? as usize;
        let input_dim = read_u64(&mut r, "checkpoint header")? as usize;
        let step = read_u64(&mut r, "checkpoint header")?;
        if depth != spec.depth {
            return Err(Error::Precondition(format!("checkpoint has L = {depth}, spec has L = {}", spec.depth)));
        }
        spec.validate()?;
        let mut weights = Vec::with_capacity(depth + 1);
        for l in 1..=depth + 1 {
            let cols = match l {
                1 => input_dim,
                l if l == depth + 1 => outputs,
                _ => width,
            };
            let data = read_f64s(&mut r, width * cols, "checkpoint weights")?;
            weights.push(DMatrix::from_row_slice(width, cols, &data));
        }
        let mut biases = Vec::with_capacity(depth + 1);
        for l in 1..=depth + 1 {
            biases.push(if spec.has_bias(l) {
                let n = if l == depth + 1 { outputs } else { width };
                Some(DVector::from_vec(read_f64s(&mut r, n, "checkpoint biases")?))
            } else {
                None
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Precondition(format!("{} trailing bytes after checkpoint", rest.len())));
        }
        Ok(Network { spec: spec.clone(), width, input_dim, outputs, step, seed, weights, biases })
    }
}
