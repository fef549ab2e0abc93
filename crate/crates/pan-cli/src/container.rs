//! Tensor container format.
//!
//! Layout (all little-endian): magic `PANT`, u16 version = 1, u8 dtype
//! (0 = f32, 1 = f64), u8 ndim, ndim × u32 dims, then the row-major payload.

use std::fs;
use std::path::Path;

use pan_core::scalar::Scalar;
use pan_core::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"PANT";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected PANT, got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u16),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Scalar types that can live in a container.
pub trait PodScalar: Scalar {
    const DTYPE: u8;
    fn write_le(v: Self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl PodScalar for f32 {
    const DTYPE: u8 = 0;
    fn write_le(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl PodScalar for f64 {
    const DTYPE: u8 = 1;
    fn write_le(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

pub fn encode<T: PodScalar>(t: &Tensor<T>) -> Vec<u8> {
    let dims = t.dims();
    assert!(dims.len() <= u8::MAX as usize, "rank too large for container");
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + t.numel() * core::mem::size_of::<T>());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        T::write_le(v, &mut out);
    }
    out
}

/// A decoded tensor in whichever dtype the file declared.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<AnyTensor, FormatError> {
    let header = 8usize;
    if bytes.len() < header {
        return Err(FormatError::Truncated {
            expected: header,
            actual: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let dtype = bytes[6];
    let ndim = bytes[7] as usize;
    let dims_end = header + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(FormatError::Truncated {
            expected: dims_end,
            actual: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = header + 4 * i;
        dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let numel: usize = dims.iter().product();
    let elem = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(FormatError::BadDtype(other)),
    };
    let expected = dims_end + numel * elem;
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[dims_end..];
    Ok(match dtype {
        0 => AnyTensor::F32(
            Tensor::from_vec(
                &dims,
                payload.chunks_exact(4).map(f32::read_le).collect(),
            )
            .expect("length checked"),
        ),
        _ => AnyTensor::F64(
            Tensor::from_vec(
                &dims,
                payload.chunks_exact(8).map(f64::read_le).collect(),
            )
            .expect("length checked"),
        ),
    })
}

pub fn write_tensor<T: PodScalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t))
        .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    let bytes =
        fs::read(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pan_core::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact_f32_and_f64() {
        let mut rng = Rng::new(5);
        let a = Tensor::<f32>::randn(&[2, 4, 4, 8], 1.0, &mut rng);
        let decoded = decode(&encode(&a)).unwrap();
        match decoded {
            AnyTensor::F32(b) => assert_eq!(a.data(), b.data()),
            _ => panic!("dtype changed"),
        }
        let a = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
        match decode(&encode(&a)).unwrap() {
            AnyTensor::F64(b) => assert_eq!(a.data(), b.data()),
            _ => panic!("dtype changed"),
        }
    }

    #[test]
    fn four_dim_grid_loads_with_expected_extents() {
        let t = Tensor::<f32>::zeros(&[2, 4, 4, 8]);
        let decoded = decode(&encode(&t)).unwrap();
        assert_eq!(decoded.dims(), &[2, 4, 4, 8]);
    }

    #[test]
    fn corrupted_magic_version_dtype_and_truncation_are_distinct() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        let good = encode(&t);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(FormatError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(FormatError::BadVersion(9))));

        let mut bad = good.clone();
        bad[6] = 7;
        assert!(matches!(decode(&bad), Err(FormatError::BadDtype(7))));

        let bad = &good[..good.len() - 3];
        match decode(bad) {
            Err(FormatError::Truncated { expected, actual }) => {
                assert_eq!(expected, good.len());
                assert_eq!(actual, good.len() - 3);
            }
            other => panic!("expected truncation, got {other:?}"),
        }

        // trailing garbage is also a size mismatch
        let mut bad = good.clone();
        bad.extend_from_slice(&[0, 0]);
        assert!(matches!(decode(&bad), Err(FormatError::Truncated { .. })));
    }
}
