//! `ACFT` tensor dumps: the magic, then `n, c, h, w` as little-endian `u32`,
//! then `n·c·h·w` little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub const ACFT_MAGIC: [u8; 4] = *b"ACFT";
/// Magic plus four dimensions.
pub const ACFT_HEADER_LEN: usize = 20;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { format: "ACFT", msg: msg.into() })
}

/// Serializes a tensor, rounding to `f32`.
pub fn encode_acft<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ACFT_HEADER_LEN + 4 * t.numel());
    out.extend_from_slice(&ACFT_MAGIC);
    for d in t.shape().0 {
        let d = u32::try_from(d).or_else(|_| format_err(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        let v = v.to_f32().expect("finite or special floats convert");
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_acft(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < ACFT_HEADER_LEN {
        return format_err(format!("{} bytes is shorter than the {ACFT_HEADER_LEN}-byte header", bytes.len()));
    }
    if bytes[..4] != ACFT_MAGIC {
        return format_err(format!("bad magic {:?}", &bytes[..4]));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
    let body = &bytes[ACFT_HEADER_LEN..];
    let expected = shape
        .0
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format { format: "ACFT", msg: format!("shape {shape} overflows") })?;
    if body.len() != expected {
        return format_err(format!("shape {shape} needs {expected} data bytes, found {}", body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn write_acft<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    super::write_file(path.as_ref(), &encode_acft(t)?)
}

pub fn read_acft(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_acft(&super::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec((1, 2, 1, 1), vec![1.0, -2.5]).unwrap();
        let b = encode_acft(&t).unwrap();
        assert_eq!(&b[..4], b"ACFT");
        assert_eq!(&b[4..20], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn round_trip_bits() {
        let t = Tensor::<f32>::from_fn((2, 3, 4, 5), |n, c, y, x| ((n * 7 + c * 3 + y) as f32).sin() / (x as f32 + 0.3));
        let back = decode_acft(&encode_acft(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_tensor() {
        let t = Tensor::<f32>::zeros((1, 0, 3, 3));
        assert_eq!(decode_acft(&encode_acft(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f32>::zeros((1, 1, 2, 2));
        let mut b = encode_acft(&t).unwrap();
        assert!(decode_acft(&b[..10]).is_err());
        assert!(decode_acft(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode_acft(&b).is_err());
    }
}
