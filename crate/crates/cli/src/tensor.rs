//! Flat binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "DYTF"
//! 4       2         version (1)
//! 6       2         dtype code (0 = f32 little-endian)
//! 8       4         rank
//! 12      4 * rank  dims
//! ...     4 * prod  row-major payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DYTF";
pub const VERSION: u16 = 1;
pub const DTYPE_F32_LE: u16 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Format(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    /// Stacks equally long rows into a `[rows, dim]` matrix.
    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(hoi_core::Error::DimensionMismatch { expected: dim, found: row.len() }.into());
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), dim], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Width of the last axis.
    pub fn row_len(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn num_rows(&self) -> usize {
        match self.row_len() {
            0 => 0,
            n => self.data.len() / n,
        }
    }

    /// Row `i` of the tensor viewed as `[prod(dims[..-1]), dims[-1]]`.
    pub fn row(&self, i: usize) -> Option<&[f32]> {
        let n = self.row_len();
        self.data.get(i * n..(i + 1) * n)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32_LE.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, at: 0 };
        let magic: [u8; 4] = cursor.take(4)?.try_into().unwrap_or_default();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = cursor.u16()?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let dtype = cursor.u16()?;
        if dtype != DTYPE_F32_LE {
            return Err(Error::BadDtype(dtype));
        }
        let rank = cursor.u32()? as usize;
        let dims = (0..rank).map(|_| cursor.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(Error::TruncatedHeader)?;
        let payload = &bytes[cursor.at..];
        let expected = count.checked_mul(4).ok_or(Error::TruncatedHeader)?;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload { expected, found: payload.len() });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes(payload.len() - expected));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Tensor { dims, data })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self.bytes.get(self.at..self.at + n).ok_or(Error::TruncatedHeader)?;
        self.at += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2x3() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dytf");
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, -0.0, 6.0]).unwrap();
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.dims(), &[2, 3]);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        assert_eq!(back.row(1).unwrap(), &t.data()[3..]);
    }

    #[test]
    fn header_errors() {
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let good = t.to_bytes();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(Tensor::from_bytes(&bad), Err(Error::BadVersion(9))));

        let mut bad = good.clone();
        bad[6] = 3;
        assert!(matches!(Tensor::from_bytes(&bad), Err(Error::BadDtype(3))));

        let short = &good[..good.len() - 4];
        assert!(matches!(
            Tensor::from_bytes(short),
            Err(Error::TruncatedPayload { expected: 24, found: 20 })
        ));

        let mut long = good.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(matches!(Tensor::from_bytes(&long), Err(Error::TrailingBytes(4))));

        assert!(matches!(Tensor::from_bytes(&good[..6]), Err(Error::TruncatedHeader)));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_rows(2, &[vec![0.0f32; 3]]).is_err());
        let t = Tensor::new(vec![0, 4], vec![]).unwrap();
        assert_eq!(t.num_rows(), 0);
    }
}
