//! Portable little-endian weight container.
//!
//! ```text
//! "LWTS" | u32 version | u32 count |
//!   count × ( u16 name_len | name (UTF-8) | u8 dtype (0 = f32) | u8 rank |
//!             u32 dims[rank] | payload )
//! | u32 CRC-32 of everything between the magic and the checksum
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result, WeightError};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LWTS";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Named tensors, kept in name order so serialization is canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    /// Looks up `name` and checks its extents.
    pub fn require(&self, name: &str, dims: &[usize]) -> Result<&Tensor, WeightError> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| WeightError::Missing(vec![name.to_string()]))?;
        if t.dims() != dims {
            return Err(WeightError::Dims {
                name: name.to_string(),
                expected: dims.to_vec(),
                found: t.dims().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Verifies the store holds exactly the `expected` names with the given
    /// extents. Every missing name is reported at once.
    pub fn check_against(&self, expected: &[(String, Vec<usize>)]) -> Result<(), WeightError> {
        let missing: Vec<String> = expected
            .iter()
            .filter(|(n, _)| !self.tensors.contains_key(n))
            .map(|(n, _)| n.clone())
            .collect();
        if !missing.is_empty() {
            return Err(WeightError::Missing(missing));
        }
        for (name, dims) in expected {
            self.require(name, dims)?;
        }
        let known: std::collections::BTreeSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        let extra: Vec<String> = self
            .names()
            .filter(|n| !known.contains(n))
            .map(str::to_string)
            .collect();
        if !extra.is_empty() {
            return Err(WeightError::Unexpected(extra));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(12 + self.scalar_count() * 4);
        body.extend_from_slice(&VERSION.to_le_bytes());
        body.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            body.extend_from_slice(&(name.len() as u16).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.push(DTYPE_F32);
            body.push(t.rank() as u8);
            for &d in t.dims() {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&body);
        let mut out = Vec::with_capacity(body.len() + 8);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        if bytes.len() < 12 {
            return Err(WeightError::Header);
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(WeightError::BadMagic(magic));
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(WeightError::UnsupportedVersion(version));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let what = format!("tensor #{i}");
            let name_len = r.u16(&what)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &what)?)
                .map_err(|_| WeightError::Name)?
                .to_string();
            let dtype = r.u8(&name)?;
            if dtype != DTYPE_F32 {
                return Err(WeightError::Dtype { name, code: dtype });
            }
            let rank = r.u8(&name)? as usize;
            let dims = (0..rank)
                .map(|_| r.u32(&name).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = dims.iter().product();
            let raw = r.take(len * 4, &name)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(WeightError::NonFinite(name));
            }
            let tensor = Tensor::new(dims.clone(), data).map_err(|_| WeightError::Dims {
                name: name.clone(),
                expected: vec![],
                found: dims,
            })?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(WeightError::Duplicate(name));
            }
        }
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(WeightError::Trailing);
        }
        let computed = crc32fast::hash(&bytes[4..body_end]);
        if stored != computed {
            return Err(WeightError::Checksum { stored, computed });
        }
        Ok(WeightStore { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| WeightError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, WeightError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
