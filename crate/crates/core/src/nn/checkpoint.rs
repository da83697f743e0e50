//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic        8 bytes  "PGDCKPT1"
//! n_layers     u32
//! per layer:   in u32, out u32, activation u32 (0 = identity, 1 = relu)
//! payload      f64 LE: layer 0 weight (out*in, row-major), layer 0 bias (out), layer 1 ...
//! ```

use std::io::{Read, Write};

use super::{Activation, Dense, ModelParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PGDCKPT1";

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.layers().len() as u32).to_le_bytes())?;
    for l in params.layers() {
        w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
        let act: u32 = match l.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        };
        w.write_all(&act.to_le_bytes())?;
    }
    for v in params.flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let bad = |d: &str| Error::format("<checkpoint>", d);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32_buf = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32_buf).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let n_layers = next_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let i = next_u32(&mut r)? as usize;
        let o = next_u32(&mut r)? as usize;
        let act = match next_u32(&mut r)? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            other => return Err(bad(&format!("unknown activation code {other}"))),
        };
        shapes.push((i, o, act));
    }
    let mut f64_buf = [0u8; 8];
    let mut read_vec = |r: &mut R, n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                r.read_exact(&mut f64_buf).map_err(|_| bad("truncated payload"))?;
                Ok(f64::from_le_bytes(f64_buf))
            })
            .collect()
    };
    let mut layers = Vec::with_capacity(n_layers);
    for (i, o, act) in shapes {
        let w = read_vec(&mut r, i * o)?;
        let b = read_vec(&mut r, o)?;
        layers.push(Dense::new(Tensor::new(vec![o, i], w)?, Tensor::from_vec(b), act)?);
    }
    ModelParams::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::mlp(7, &[5, 4], 3, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 3 * 12 + 8 * p.num_params());
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::mlp(3, &[2], 2, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
