//! Raw tensor files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"LAET" | u32 version (=1) | u32 ndim | ndim × u64 dims | prod(dims) × f64, row-major
//! ```
//!
//! Values are stored bit-for-bit, so a write/read round trip is exact,
//! including NaN payloads and signed zeros.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use laenkf_core::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LAET";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    /// Stacks equally shaped matrices along a new leading axis.
    pub fn stack(ms: &[Matrix]) -> Result<Self> {
        let (r, c) = ms.first().map_or((0, 0), Matrix::shape);
        let mut data = Vec::with_capacity(ms.len() * r * c);
        for m in ms {
            if m.shape() != (r, c) {
                return Err(Error::Format("cannot stack matrices of different shapes".into()));
            }
            data.extend_from_slice(m.as_slice());
        }
        Ok(Self {
            shape: vec![ms.len(), r, c],
            data,
        })
    }

    pub fn into_vector(self) -> Result<Vec<f64>> {
        match self.shape.as_slice() {
            [_] => Ok(self.data),
            s => Err(Error::Format(format!("expected a vector, got shape {s:?}"))),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match *self.shape.as_slice() {
            [r, c] => Ok(Matrix::from_vec(r, c, self.data)?),
            ref s => Err(Error::Format(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Splits a rank-3 tensor back into its leading-axis matrices.
    pub fn unstack(self) -> Result<Vec<Matrix>> {
        let [n, r, c] = *self.shape.as_slice() else {
            return Err(Error::Format(format!("expected a rank-3 tensor, got shape {:?}", self.shape)));
        };
        let block = r * c;
        (0..n)
            .map(|i| Ok(Matrix::from_vec(r, c, self.data[i * block..(i + 1) * block].to_vec())?))
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.shape.len() as u32)?;
        for &d in &self.shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in &self.data {
            w.write_u64::<LittleEndian>(v.to_bits())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after tensor data".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LAET");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &2u64.to_le_bytes());
        assert_eq!(&buf[28..36], &1f64.to_le_bytes());
        assert_eq!(&buf[36..44], &(-0f64).to_le_bytes());
        assert_eq!(buf.len(), 44);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = Vec::new();
        Tensor::vector(&[1.0]).write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(Tensor::read_from(&mut buf.as_slice()).is_err());
    }
}
