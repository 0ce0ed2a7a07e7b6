//! Binary encoder weight container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   "RKEW"
//! version u32 (= 1)
//! layers  u32
//! k       u32
//! per layer:
//!   c_in  u32
//!   c_out u32
//!   self_weight      c_in*c_out  f64, row-major
//!   neighbor_weight  c_in*c_out  f64, row-major
//!   directions       c_out*c_out f64, row-major
//! ```

use std::io::{Read, Write};

use super::{EncoderWeights, FeatureError, LayerWeights, Matrix};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"RKEW";
pub const WEIGHTS_VERSION: u32 = 1;

// Large enough for any sane encoder, small enough to reject garbage headers.
const MAX_DIM: u32 = 1 << 16;

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_matrix<W: Write>(w: &mut W, m: &Matrix) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_weights<W: Write>(mut w: W, weights: &EncoderWeights) -> Result<(), FeatureError> {
    weights.validate()?;
    w.write_all(&WEIGHTS_MAGIC)?;
    put_u32(&mut w, WEIGHTS_VERSION)?;
    put_u32(&mut w, weights.layers.len() as u32)?;
    put_u32(&mut w, weights.k as u32)?;
    for l in &weights.layers {
        put_u32(&mut w, l.c_in() as u32)?;
        put_u32(&mut w, l.c_out() as u32)?;
        put_matrix(&mut w, &l.self_weight)?;
        put_matrix(&mut w, &l.neighbor_weight)?;
        put_matrix(&mut w, &l.directions)?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, FeatureError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_dim<R: Read>(r: &mut R, what: &str) -> Result<usize, FeatureError> {
    let v = get_u32(r)?;
    if v == 0 || v > MAX_DIM {
        return Err(FeatureError::WeightFile(format!("{what} = {v} out of range")));
    }
    Ok(v as usize)
}

fn get_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix, FeatureError> {
    let mut m = Matrix::zeros(rows, cols);
    let mut b = [0u8; 8];
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut b)?;
            m[(i, j)] = f64::from_le_bytes(b);
        }
    }
    Ok(m)
}

pub fn read_weights<R: Read>(mut r: R) -> Result<EncoderWeights, FeatureError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != WEIGHTS_MAGIC {
        return Err(FeatureError::WeightFile("bad magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != WEIGHTS_VERSION {
        return Err(FeatureError::WeightFile(format!(
            "unsupported version {version}"
        )));
    }
    let n_layers = get_dim(&mut r, "layer count")?;
    let k = get_dim(&mut r, "k")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let ci = get_dim(&mut r, "c_in")?;
        let co = get_dim(&mut r, "c_out")?;
        layers.push(LayerWeights {
            self_weight: get_matrix(&mut r, ci, co)?,
            neighbor_weight: get_matrix(&mut r, ci, co)?,
            directions: get_matrix(&mut r, co, co)?,
        });
    }
    let weights = EncoderWeights { layers, k };
    weights.validate()?;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), c1 in 1usize..6, c2 in 1usize..6, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = EncoderWeights::random(&[1, c1, c2], k, &mut rng);
            let mut buf = Vec::new();
            write_weights(&mut buf, &w).unwrap();
            let back = read_weights(buf.as_slice()).unwrap();
            prop_assert_eq!(
                back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                w.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back, w);
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(
            read_weights(&b"NOPE\x01\0\0\0"[..]),
            Err(FeatureError::WeightFile(_))
        ));
        let mut buf = Vec::new();
        write_weights(&mut buf, &EncoderWeights::zeros(&[1, 2], 4)).unwrap();
        buf[4] = 9;
        assert!(matches!(read_weights(buf.as_slice()), Err(FeatureError::WeightFile(_))));
        let mut buf = Vec::new();
        write_weights(&mut buf, &EncoderWeights::zeros(&[1, 2], 4)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_weights(buf.as_slice()), Err(FeatureError::Io(_))));
    }
}
