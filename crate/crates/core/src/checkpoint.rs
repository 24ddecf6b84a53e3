//! Self-describing binary container for parameters, optimizer state and
//! run metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "PSYNCKPT"
//! version  u32
//! count    u32
//! entries  count × { name_len u32, name utf-8, kind u8, payload }
//!   kind 0 (real):  ndim u32, dims u64 × ndim, f64 × product(dims)
//!   kind 1 (index): ndim u32, dims u64 × ndim, i64 × product(dims)
//!   kind 2 (text):  len u64, utf-8 bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PSYNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Real { shape: Vec<usize>, data: Vec<f64> },
    Index { shape: Vec<usize>, data: Vec<i64> },
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn put_real(&mut self, name: impl Into<String>, shape: &[usize], data: &[f64]) {
        self.entries.insert(
            name.into(),
            Entry::Real { shape: shape.to_vec(), data: data.to_vec() },
        );
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.put_real(name, t.shape(), t.data());
    }

    pub fn put_index(&mut self, name: impl Into<String>, data: &[i64]) {
        self.entries.insert(
            name.into(),
            Entry::Index { shape: vec![data.len()], data: data.to_vec() },
        );
    }

    pub fn put_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(name.into(), Entry::Text(text.into()));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn real(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.entries.get(name) {
            Some(Entry::Real { shape, data }) => Ok((shape, data)),
            Some(_) => Err(Error::Checkpoint(format!("entry {name} is not a real tensor"))),
            None => Err(Error::Checkpoint(format!("missing entry {name}"))),
        }
    }

    pub fn index(&self, name: &str) -> Result<&[i64]> {
        match self.entries.get(name) {
            Some(Entry::Index { data, .. }) => Ok(data),
            Some(_) => Err(Error::Checkpoint(format!("entry {name} is not an index array"))),
            None => Err(Error::Checkpoint(format!("missing entry {name}"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.entries.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            Some(_) => Err(Error::Checkpoint(format!("entry {name} is not text"))),
            None => Err(Error::Checkpoint(format!("missing entry {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Real { shape, data } => {
                    out.push(0);
                    write_shape(&mut out, shape);
                    data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                Entry::Index { shape, data } => {
                    out.push(1);
                    write_shape(&mut out, shape);
                    data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                Entry::Text(s) => {
                    out.push(2);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?;
            let entry = match r.take(1)?[0] {
                0 => {
                    let shape = r.shape()?;
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<_>>()?;
                    Entry::Real { shape, data }
                }
                1 => {
                    let shape = r.shape()?;
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| r.u64().map(|v| v as i64)).collect::<Result<_>>()?;
                    Entry::Index { shape, data }
                }
                2 => {
                    let len = r.u64()? as usize;
                    let s = String::from_utf8(r.take(len)?.to_vec())
                        .map_err(|_| Error::Checkpoint(format!("text entry {name} is not utf-8")))?;
                    Entry::Text(s)
                }
                k => return Err(Error::Checkpoint(format!("unknown entry kind {k} for {name}"))),
            };
            entries.insert(name, entry);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(Container { entries })
    }

    /// Writes to a sibling temp file then renames it over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Container> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

fn write_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    shape.iter().for_each(|&d| out.extend_from_slice(&(d as u64).to_le_bytes()));
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u32()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        match n {
            Some(n) if n.saturating_mul(8) <= self.bytes.len() - self.pos => Ok(shape),
            _ => Err(Error::Checkpoint(format!("implausible tensor shape {shape:?}"))),
        }
    }
}
