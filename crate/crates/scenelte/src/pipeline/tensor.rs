//! Tensor file format.
//!
//! Binary layout, all integers little-endian regardless of host:
//!
//! ```text
//! magic "LTEB" (4 bytes)
//! version u32            (currently 1)
//! elem u8                (4 = f32, 8 = f64)
//! rank u32
//! dims u64 x rank        (rank 0 = scalar, one element)
//! payload                (product(dims) elements, little-endian)
//! meta_len u64
//! meta                   (UTF-8 JSON, meta_len bytes)
//! ```

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use std::io::{Read, Write};
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"LTEB";
const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elem_size(&self) -> u8 {
        match self {
            TensorData::F32(_) => 4,
            TensorData::F64(_) => 8,
        }
    }

    /// Lossless for f64 payloads; widens f32.
    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    /// Row-major element order.
    pub data: TensorData,
    pub meta: serde_json::Value,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: TensorData, meta: serde_json::Value) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::TensorFormat(format!(
                "payload size mismatch: dims {:?} need {} elements, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        Ok(Self { dims, data, meta })
    }

    pub fn from_array1(a: &Array1<f64>, meta: serde_json::Value) -> Self {
        Self { dims: vec![a.len()], data: TensorData::F64(a.to_vec()), meta }
    }

    pub fn from_array2(a: &Array2<f64>, meta: serde_json::Value) -> Self {
        Self {
            dims: vec![a.nrows(), a.ncols()],
            data: TensorData::F64(a.iter().copied().collect()),
            meta,
        }
    }

    pub fn from_array3(a: &Array3<f64>, meta: serde_json::Value) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: TensorData::F64(a.iter().copied().collect()),
            meta,
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::TensorFormat(format!(
                "expected rank 2, got {:?}",
                self.dims
            )));
        }
        Array2::from_shape_vec((self.dims[0], self.dims[1]), self.data.as_f64())
            .map_err(|e| Error::TensorFormat(e.to_string()))
    }

    pub fn to_array3(&self) -> Result<Array3<f64>> {
        if self.dims.len() != 3 {
            return Err(Error::TensorFormat(format!(
                "expected rank 3, got {:?}",
                self.dims
            )));
        }
        Array3::from_shape_vec(
            (self.dims[0], self.dims[1], self.dims[2]),
            self.data.as_f64(),
        )
        .map_err(|e| Error::TensorFormat(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let expected: usize = self.dims.iter().product();
        if self.data.len() != expected {
            return Err(Error::TensorFormat("payload size mismatch".into()));
        }
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_VERSION.to_le_bytes())?;
        w.write_all(&[self.data.elem_size()])?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => {
                for &x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for &x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<TensorFile> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::TensorFormat("file too short for magic".into()))?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::TensorFormat(format!("bad magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != TENSOR_VERSION {
            return Err(Error::TensorFormat(format!("unsupported version {version}")));
        }
        let mut elem = [0u8; 1];
        r.read_exact(&mut elem)?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut u64buf = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            dims.push(u64::from_le_bytes(u64buf) as usize);
        }
        let count: usize = dims.iter().product();
        let data = match elem[0] {
            4 => {
                let mut v = Vec::with_capacity(count);
                let mut buf = [0u8; 4];
                for _ in 0..count {
                    r.read_exact(&mut buf).map_err(|_| {
                        Error::TensorFormat("payload size mismatch".into())
                    })?;
                    v.push(f32::from_le_bytes(buf));
                }
                TensorData::F32(v)
            }
            8 => {
                let mut v = Vec::with_capacity(count);
                let mut buf = [0u8; 8];
                for _ in 0..count {
                    r.read_exact(&mut buf).map_err(|_| {
                        Error::TensorFormat("payload size mismatch".into())
                    })?;
                    v.push(f64::from_le_bytes(buf));
                }
                TensorData::F64(v)
            }
            e => return Err(Error::TensorFormat(format!("bad element size {e}"))),
        };
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::TensorFormat("missing metadata length".into()))?;
        let meta_len = u64::from_le_bytes(u64buf) as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)
            .map_err(|_| Error::TensorFormat("metadata size mismatch".into()))?;
        let meta = serde_json::from_slice(&meta_bytes)?;
        Ok(TensorFile { dims, data, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn load(path: &Path) -> Result<TensorFile> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        TensorFile::read_from(&mut file)
    }
}
