//! Binary checkpoints.
//!
//! Layout, all little endian:
//!
//! ```text
//! "GRKB1"                         5 bytes
//! p, N, activation, norm          u32 each (activation: 0 quadratic, 1 relu;
//!                                 norm: 0 none, 1 batchnorm, 2 layernorm)
//! U (N×p), V (N×p), W (p×N)       f64, row-major
//! γ, β, running_mean, running_var f64 × N each, only when norm != 0
//! ```

use std::io::{Read, Write};

use super::{Activation, ModelParams, NormKind, NormParams};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GRKB1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub activation: Activation,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, activation: Activation) -> Result<()> {
    params.validate()?;
    w.write_all(CHECKPOINT_MAGIC)?;
    for x in [
        params.p() as u32,
        params.width() as u32,
        activation.code(),
        NormKind::code(params.norm_kind()),
    ] {
        w.write_all(&x.to_le_bytes())?;
    }
    let mut put = |xs: &[f64]| -> Result<()> {
        for x in xs {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    put(params.u.as_slice())?;
    put(params.v.as_slice())?;
    put(params.w.as_slice())?;
    if let Some(n) = &params.norm {
        put(&n.gamma)?;
        put(&n.beta)?;
        put(&n.running_mean)?;
        put(&n.running_var)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint body: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for checkpoint magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let p = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let act_code = read_u32(&mut r)?;
    let norm_code = read_u32(&mut r)?;
    if n == 0 || p < 2 {
        return Err(Error::Format(format!("checkpoint has invalid shape N={n}, p={p}")));
    }
    let activation =
        Activation::from_code(act_code).ok_or_else(|| Error::Format(format!("unknown activation code {act_code}")))?;
    let norm_kind =
        NormKind::from_code(norm_code).ok_or_else(|| Error::Format(format!("unknown norm code {norm_code}")))?;

    let u = Matrix::from_vec(n, p, read_f64s(&mut r, n * p)?)?;
    let v = Matrix::from_vec(n, p, read_f64s(&mut r, n * p)?)?;
    let w = Matrix::from_vec(p, n, read_f64s(&mut r, p * n)?)?;
    let norm = match norm_kind {
        None => None,
        Some(kind) => {
            let mut np = NormParams::new(kind, n);
            np.gamma = read_f64s(&mut r, n)?;
            np.beta = read_f64s(&mut r, n)?;
            np.running_mean = read_f64s(&mut r, n)?;
            np.running_var = read_f64s(&mut r, n)?;
            Some(np)
        }
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
    }
    let params = ModelParams { u, v, w, norm };
    params.validate()?;
    Ok(Checkpoint { params, activation })
}
