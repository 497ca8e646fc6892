use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Vector;

const MAGIC: &[u8; 4] = b"CCVS";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Text,
    Code,
}

impl Side {
    fn tag(self) -> u8 {
        match self {
            Side::Text => 0,
            Side::Code => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Side::Text),
            1 => Some(Side::Code),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Text => "text",
            Side::Code => "code",
        }
    }
}

/// Immutable matrix of unit-norm rows keyed by record id.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorStore {
    dim: usize,
    side: Side,
    ids: Vec<String>,
    data: Vec<f32>,
    content_hash: [u8; 32],
    index: HashMap<String, usize>,
}

impl VectorStore {
    /// Builds a store, normalizing every row. Rejects zero or non-finite rows.
    pub fn from_rows(
        dim: usize,
        side: Side,
        ids: Vec<String>,
        rows: Vec<Vec<f32>>,
        content_hash: [u8; 32],
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Data(format!(
                "{} ids but {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for (id, row) in ids.iter().zip(rows) {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            let v = Vector::normalized(row).map_err(|e| Error::Data(format!("row `{id}`: {e}")))?;
            data.extend_from_slice(v.as_slice());
        }
        Self::from_parts(dim, side, ids, data, content_hash)
    }

    fn from_parts(
        dim: usize,
        side: Side,
        ids: Vec<String>,
        data: Vec<f32>,
        content_hash: [u8; 32],
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate id `{id}` in vector store")));
            }
        }
        Ok(Self {
            dim,
            side,
            ids,
            data,
            content_hash,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Hash of (provider identity, dimension, side, ids) the store was built from.
    pub fn content_hash(&self) -> &[u8; 32] {
        &self.content_hash
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + self.data.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.push(self.side.tag());
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&self.content_hash);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Data("not a vector store (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!(
                "unsupported vector store version {version}"
            )));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let side =
            Side::from_tag(r.take(1)?[0]).ok_or_else(|| Error::Data("bad side tag".into()))?;
        r.take(3)?;
        let mut content_hash = [0u8; 32];
        content_hash.copy_from_slice(r.take(32)?);
        let raw = r.take(count * dim * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Data(format!("id table: {e}")))?;
            ids.push(s.to_string());
        }
        if r.pos != bytes.len() {
            return Err(Error::Data(
                "trailing bytes after vector store id table".into(),
            ));
        }
        Self::from_parts(dim, side, ids, data, content_hash)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("truncated binary file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
}
