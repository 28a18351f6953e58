//! Binary tensor format and the parameter bundle container.
//!
//! Tensor layout (all integers little-endian):
//!
//! ```text
//! b"DRCP" | u16 version = 1 | u8 dtype (0 = f32) | u8 ndim | ndim x u32 dims | f32 payload
//! ```
//!
//! A bundle is a named list of tensors:
//!
//! ```text
//! b"DRCB" | u16 version = 1 | u32 count | count x (u32 name_len | name | u64 len | tensor bytes)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{FeatureMap, Kernel2D, Linear};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DRCP";
pub const BUNDLE_MAGIC: &[u8; 4] = b"DRCB";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// An n-dimensional f32 tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dims.is_empty() || self.dims.len() > u8::MAX as usize {
            return Err(Error::format(format!(
                "unsupported rank {}",
                self.dims.len()
            )));
        }
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::format(format!("dim {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad magic, expected DRCP"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(format!("unsupported dtype tag {dtype}")));
        }
        let ndim = r.u8()? as usize;
        if ndim == 0 {
            return Err(Error::format("tensor has no dimensions"));
        }
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = element_count(&dims)?;
        let payload_len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format("payload size overflows"))?;
        let payload = r.take(payload_len)?;
        if !r.is_empty() {
            return Err(Error::format("trailing bytes after payload"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn into_feature_map(self) -> Result<FeatureMap> {
        match self.dims[..] {
            [c, h, w] => FeatureMap::from_vec(c, h, w, self.data),
            _ => Err(Error::format(format!(
                "expected a rank-3 feature map, got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&FeatureMap> for RawTensor {
    fn from(m: &FeatureMap) -> Self {
        let (c, h, w) = m.dims();
        Self {
            dims: vec![c, h, w],
            data: m.data().to_vec(),
        }
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::format("tensor has no dimensions"));
    }
    let mut n: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::format(format!("zero-sized dimension in {dims:?}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::format(format!("dims {dims:?} overflow")))?;
    }
    Ok(n)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(format!(
                "truncated: wanted {n} bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

pub fn write_tensor(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    fs::write(path, RawTensor::from(map).to_bytes()?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    RawTensor::from_bytes(&fs::read(path)?)?.into_feature_map()
}

/// Named tensors, kept in name order so encoding is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bundle {
    entries: BTreeMap<String, RawTensor>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: RawTensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&RawTensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::format(format!("bundle has no entry {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert_kernel(&mut self, prefix: &str, k: &Kernel2D) {
        self.insert(
            format!("{prefix}.weight"),
            RawTensor {
                dims: vec![k.out_channels(), k.in_channels(), k.k_h(), k.k_w()],
                data: k.weights().to_vec(),
            },
        );
        self.insert(
            format!("{prefix}.bias"),
            RawTensor {
                dims: vec![k.out_channels()],
                data: k.bias().to_vec(),
            },
        );
    }

    pub fn kernel(&self, prefix: &str) -> Result<Kernel2D> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        match w.dims[..] {
            [o, i, kh, kw] => Kernel2D::new(o, i, kh, kw, w.data.clone(), b.data.clone()),
            _ => Err(Error::format(format!("{prefix}.weight is not rank 4"))),
        }
    }

    pub fn insert_linear(&mut self, prefix: &str, l: &Linear) {
        self.insert(
            format!("{prefix}.weight"),
            RawTensor {
                dims: vec![l.out_dim(), l.in_dim()],
                data: l.weight().to_vec(),
            },
        );
        self.insert(
            format!("{prefix}.bias"),
            RawTensor {
                dims: vec![l.out_dim()],
                data: l.bias().to_vec(),
            },
        );
    }

    pub fn linear(&self, prefix: &str) -> Result<Linear> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        match w.dims[..] {
            [o, i] => Linear::new(i, o, w.data.clone(), b.data.clone()),
            _ => Err(Error::format(format!("{prefix}.weight is not rank 2"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            let bytes = tensor.to_bytes()?;
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::format("bad magic, expected DRCB"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported bundle version {version}"
            )));
        }
        let count = r.u32()?;
        let mut bundle = Bundle::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("bundle entry name is not utf-8"))?
                .to_owned();
            let len = usize::try_from(r.u64()?)
                .map_err(|_| Error::format("bundle entry length overflows"))?;
            bundle.insert(name, RawTensor::from_bytes(r.take(len)?)?);
        }
        if !r.is_empty() {
            return Err(Error::format("trailing bytes after bundle"));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
