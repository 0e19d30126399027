//! Container for externally computed hidden matrices.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes   "DMNE"
//! version   u32       1
//! count     u64       number of records
//! record * count:
//!   id_len    u32
//!   id        id_len bytes, UTF-8
//!   role      u8      0 = passage, 1 = question, 2 = answer
//!   candidate u32     candidate index for answers, 0 otherwise
//!   rows      u32
//!   cols      u32
//!   values    rows * cols f64, row-major
//! ```
//!
//! A directory is read as the union of its `*.dmne` files in filename order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const STORE_MAGIC: &[u8; 4] = b"DMNE";
pub const STORE_VERSION: u32 = 1;
pub const STORE_EXTENSION: &str = "dmne";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Passage,
    Question,
    Answer(usize),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Passage => write!(f, "passage"),
            Role::Question => write!(f, "question"),
            Role::Answer(i) => write!(f, "answer[{i}]"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    records: BTreeMap<(String, Role), Matrix>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, example_id: &str, role: Role, hidden: Matrix) {
        self.records.insert((example_id.to_string(), role), hidden);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct example ids, sorted.
    pub fn example_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.records.keys().map(|(id, _)| id.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn get(&self, example_id: &str, role: Role) -> Result<&Matrix> {
        self.records
            .get(&(example_id.to_string(), role))
            .ok_or_else(|| Error::MissingEmbedding {
                example_id: example_id.to_string(),
                role: role.to_string(),
            })
    }

    /// Like [`get`](Self::get) but also enforces the configured hidden size.
    pub fn get_checked(&self, example_id: &str, role: Role, hidden: usize) -> Result<&Matrix> {
        let m = self.get(example_id, role)?;
        if m.cols() != hidden || m.rows() == 0 {
            return Err(Error::shape(
                "load_precomputed",
                format!(
                    "`{example_id}` {role}: stored {}x{}, configured hidden size {hidden}",
                    m.rows(),
                    m.cols()
                ),
            ));
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for ((id, role), m) in &self.records {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            let (tag, cand) = match role {
                Role::Passage => (0u8, 0u32),
                Role::Question => (1, 0),
                Role::Answer(i) => (2, *i as u32),
            };
            out.push(tag);
            out.extend_from_slice(&cand.to_le_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != STORE_MAGIC {
            return Err(bad("not an embedding store (bad magic)"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != STORE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: STORE_VERSION,
            });
        }
        let count = r.u64().ok_or_else(|| bad("truncated header"))?;
        let mut store = EmbeddingStore::new();
        for n in 0..count {
            let trunc = || bad(&format!("truncated record {n}"));
            let id_len = r.u32().ok_or_else(trunc)? as usize;
            let id = std::str::from_utf8(r.take(id_len).ok_or_else(trunc)?)
                .map_err(|_| bad(&format!("record {n}: id is not UTF-8")))?
                .to_string();
            let tag = r.take(1).ok_or_else(trunc)?[0];
            let cand = r.u32().ok_or_else(trunc)? as usize;
            let role = match tag {
                0 => Role::Passage,
                1 => Role::Question,
                2 => Role::Answer(cand),
                t => return Err(bad(&format!("record {n}: unknown role tag {t}"))),
            };
            let rows = r.u32().ok_or_else(trunc)? as usize;
            let cols = r.u32().ok_or_else(trunc)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64().ok_or_else(trunc)?);
            }
            store.insert(&id, role, Matrix::from_vec(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last record"));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a single store file, or every `*.dmne` file of a directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_dir() {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            return Self::from_bytes(&bytes, path);
        }
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == STORE_EXTENSION))
            .collect();
        files.sort();
        let mut store = EmbeddingStore::new();
        for f in files {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            store.records.extend(Self::from_bytes(&bytes, &f)?.records);
        }
        Ok(store)
    }
}

/// Reads one stored matrix and checks it against the configured hidden size.
pub fn load_precomputed(
    path: impl AsRef<Path>,
    example_id: &str,
    role: Role,
    hidden: usize,
) -> Result<Matrix> {
    EmbeddingStore::load(path)?
        .get_checked(example_id, role, hidden)
        .cloned()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
