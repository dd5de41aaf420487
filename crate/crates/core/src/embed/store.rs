//! `DRE1` embedding store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "DRE1"
//! version    u32      1
//! dim        u32
//! count      u64
//! normalized u8       0 or 1
//! count × { id_len u16, id utf-8 bytes, dim × f32 }
//! ```

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::EmbeddingVector;

pub const MAGIC: [u8; 4] = *b"DRE1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"DRE1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}, expected {VERSION}")]
    VersionMismatch(u32),
    #[error("store truncated: field at byte offset {offset} is missing {needed} bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("record id at byte offset {offset} is not valid UTF-8")]
    InvalidId { offset: usize },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("id `{0}` is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("vector for `{id}` has dim {found}, store dim is {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("store dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    normalized: bool,
    records: IndexMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, normalized: bool) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(Self {
            dim,
            normalized,
            records: IndexMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), StoreError> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(StoreError::DimMismatch {
                id,
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if id.len() > usize::from(u16::MAX) {
            return Err(StoreError::IdTooLong(id));
        }
        if self.records.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.records.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.records.get(id)
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per_record: usize = self.records.keys().map(|k| 2 + k.len() + 4 * self.dim).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + per_record);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.push(u8::from(self.normalized));
        for (id, v) in &self.records {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(StoreError::VersionMismatch(version));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let normalized = cur.take(1)?[0] != 0;
        let mut store = Self::new(dim, normalized)?;
        for _ in 0..count {
            let id_len = usize::from(cur.u16()?);
            let id_offset = cur.pos;
            let id = std::str::from_utf8(cur.take(id_len)?)
                .map_err(|_| StoreError::InvalidId { offset: id_offset })?
                .to_string();
            let raw = cur.take(4 * dim)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(id, EmbeddingVector(values))?;
        }
        if cur.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - cur.pos));
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(StoreError::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    std::fs::write(path, store.to_bytes()).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingStore::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_records() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(3, true).unwrap();
        s.insert("d1", EmbeddingVector(vec![1.0, 0.0, 0.0])).unwrap();
        s.insert("d2", EmbeddingVector(vec![0.0, -0.6, 0.8])).unwrap();
        s
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.dre");
        let s = two_records();
        write_store(&s, &path).unwrap();
        assert_eq!(read_store(&path).unwrap(), s);
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = two_records().to_bytes();
        assert_eq!(&bytes[..4], b"DRE1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(bytes[20], 1);
        assert_eq!(&bytes[21..23], &2u16.to_le_bytes());
        assert_eq!(&bytes[23..25], b"d1");
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 21 + 2 * (2 + 2 + 12));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = two_records().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(StoreError::BadMagic(m)) if &m == b"XXXX"
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = two_records().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(StoreError::VersionMismatch(2))
        ));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = two_records().to_bytes();
        let cut = bytes.len() - 5;
        match EmbeddingStore::from_bytes(&bytes[..cut]) {
            Err(StoreError::Truncated { offset, needed }) => {
                assert_eq!(offset, cut - 7);
                assert_eq!(needed, 12 - 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_in_file_rejected() {
        let mut bytes = two_records().to_bytes();
        // Rename "d2" to "d1".
        let second_id = 21 + 2 + 2 + 12 + 2;
        bytes[second_id + 1] = b'1';
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(StoreError::DuplicateId(id)) if id == "d1"
        ));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = two_records().to_bytes();
        bytes.push(0);
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(StoreError::TrailingBytes(1))
        ));
    }

    #[test]
    fn insert_checks_dim() {
        let mut s = EmbeddingStore::new(3, false).unwrap();
        assert!(matches!(
            s.insert("x", EmbeddingVector(vec![1.0])),
            Err(StoreError::DimMismatch { expected: 3, found: 1, .. })
        ));
    }
}
