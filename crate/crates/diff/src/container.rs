//! Flat binary container of named arrays.
//!
//! Layout (all integers little-endian):
//! `magic "SGOA" | version u32 | count u32` followed by `count` entries of
//! `name_len u32 | name | dtype u8 | rank u32 | dims u64 * rank | raw data`.

use std::io::{Read, Write};

use crate::array::{numel, Array};
use crate::error::{DiffError, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"SGOA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
            TensorData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn from_array<T: Scalar>(name: &str, a: &Array<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(a.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()),
            _ => TensorData::F64(a.data().iter().map(|v| v.f64()).collect()),
        };
        Self {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            data,
        }
    }

    pub fn u8(name: &str, shape: &[usize], data: Vec<u8>) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: TensorData::U8(data),
        }
    }

    /// Float contents converted to `T`.
    pub fn to_array<T: Scalar>(&self) -> Result<Array<T>> {
        let data: Vec<T> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
            TensorData::U8(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            TensorData::U32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
        };
        Array::from_vec(self.shape.clone(), data)
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            other => Err(DiffError::Format(format!(
                "`{}` has dtype {:?}, expected U8",
                self.name,
                other.dtype()
            ))),
        }
    }
}

pub fn write_container<W: Write>(mut w: W, entries: &[NamedTensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        if numel(&e.shape) != e.data.len() {
            return Err(DiffError::Shape {
                expected: e.shape.clone(),
                got: vec![e.data.len()],
            });
        }
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(e.data.dtype() as u8);
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => buf.extend_from_slice(v),
            TensorData::U32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DiffError::Format(format!(
                "truncated: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_container(&bytes)
}

pub fn parse_container(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(DiffError::Format(format!("bad magic {magic:?}")));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(DiffError::Format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| DiffError::Format("name is not utf-8".into()))?;
        let code = c.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| DiffError::Format(format!("unknown dtype code {code}")))?;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let n = numel(&shape);
        let raw = c.take(n * dtype.size())?;
        let data = match dtype {
            DType::F32 => TensorData::F32(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
            DType::F64 => TensorData::F64(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
            DType::U8 => TensorData::U8(raw.to_vec()),
            DType::U32 => TensorData::U32(raw.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect()),
        };
        out.push(NamedTensor { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(DiffError::Format(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}
