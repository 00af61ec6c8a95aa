//! `.aent` binary tensor files.
//!
//! Layout (all little-endian): magic `AENT`, u16 version (1), u16 ndim,
//! ndim × u64 extents, then the row-major payload as IEEE-754 f32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AENT";
pub const VERSION: u16 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let shape = t.shape();
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u16).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let fail = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let ndim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header = 8 + 8 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(fail(format!("truncated header for {ndim} dims")));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| fail("extent overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() != count * 4 {
        return Err(fail(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    Tensor::new(&shape, data).map_err(|e| fail(e.to_string()))
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Rounds every element through f32, matching what a write/read cycle yields.
pub fn f32_rounded(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"AENT");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..8], &[2, 0]);
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &3u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24 + 6 * 4);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::zeros(&[2, 2]);
        let p = Path::new("mem");
        let mut b = encode(&t);
        b[0] = b'X';
        assert!(decode(&b, p).is_err());
        let mut b = encode(&t);
        b[4] = 2;
        assert!(decode(&b, p).is_err());
        let b = encode(&t);
        assert!(decode(&b[..b.len() - 1], p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_f32_exact(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut rng = crate::numerics::rng::Rng::new(seed);
            let data = (0..rows * cols).map(|_| rng.gaussian() * 10.0).collect();
            let t = Tensor::new(&[rows, cols], data).unwrap();
            let back = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back, f32_rounded(&t));
        }
    }
}
