//! Binary model bundle.
//!
//! ```text
//! magic        4 bytes  "DMNB"
//! version      u32 LE
//! payload_len  u64 LE
//! payload      payload_len bytes
//! checksum     32 bytes, SHA-256 of every preceding byte
//! ```
//!
//! The payload is a length-prefixed (u32 LE) JSON header describing the
//! config, vocabulary and tensor list, followed by each tensor's values as
//! row-major f64 LE in header order. When optimizer state is present, the
//! first moments of the tensors named in `moment_ids` follow, then their
//! second moments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::harness::OptimizerState;
use crate::matching::{MatchParameters, PairParameters};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Matrix, ParamId, Vector};

pub const BUNDLE_MAGIC: &[u8; 4] = b"DMNB";
pub const BUNDLE_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;
const CHECKSUM: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub version: u32,
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
}

impl ModelBundle {
    pub fn new(model: Model, optimizer: Option<OptimizerState>) -> Self {
        ModelBundle {
            version: BUNDLE_VERSION,
            model,
            optimizer,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    id: usize,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
    optimizer_step: Option<u64>,
    /// Tensors with optimizer moments, in payload order.
    moment_ids: Vec<usize>,
}

fn push_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_bundle(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let model = &bundle.model;
    model.validate()?;
    let ids = model.param_ids();
    let tensors = ids
        .iter()
        .map(|&id| {
            let (rows, cols) = model.param_shape(id).expect("known id");
            TensorEntry {
                id: id.0,
                name: crate::model::param_name(id),
                rows,
                cols,
            }
        })
        .collect();
    let moment_ids: Vec<ParamId> = match &bundle.optimizer {
        None => Vec::new(),
        Some(state) => {
            if state.first.keys().ne(state.second.keys()) {
                return Err(Error::shape(
                    "encode_bundle",
                    "first and second moments cover different tensors",
                ));
            }
            if let Some(id) = state.first.keys().find(|id| !ids.contains(id)) {
                return Err(Error::shape(
                    "encode_bundle",
                    format!("moments for unknown tensor {}", id.0),
                ));
            }
            state.first.keys().copied().collect()
        }
    };
    let header = Header {
        config: model.config,
        vocab: model.vocab.clone(),
        tensors,
        optimizer_step: bundle.optimizer.as_ref().map(|s| s.step),
        moment_ids: moment_ids.iter().map(|id| id.0).collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut payload = Vec::new();
    payload.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    payload.extend_from_slice(&header_json);
    for &id in &ids {
        push_f64s(&mut payload, model.param_slice(id).expect("known id"));
    }
    if let Some(state) = &bundle.optimizer {
        for moments in [&state.first, &state.second] {
            for id in &moment_ids {
                let n = model.param_slice(*id).expect("known id").len();
                let m = &moments[id];
                if m.len() != n {
                    return Err(Error::shape(
                        "encode_bundle",
                        format!("moment of {} has {} entries, expected {n}", id.0, m.len()),
                    ));
                }
                push_f64s(&mut payload, m);
            }
        }
    }

    let mut out = Vec::with_capacity(PREAMBLE + payload.len() + CHECKSUM);
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&bundle.version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity("payload ends early".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Integrity("tensor size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Verifies length and checksum before interpreting any field, so a damaged
/// file never yields a partially loaded model.
pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < PREAMBLE + CHECKSUM {
        return Err(Error::Integrity(format!(
            "file is {} bytes, shorter than the fixed framing",
            bytes.len()
        )));
    }
    let payload_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected_total = (PREAMBLE as u64)
        .checked_add(payload_len)
        .and_then(|n| n.checked_add(CHECKSUM as u64));
    if expected_total != Some(bytes.len() as u64) {
        return Err(Error::Integrity(format!(
            "length field says {payload_len} payload bytes, file holds {}",
            bytes.len().saturating_sub(PREAMBLE + CHECKSUM)
        )));
    }
    let body = &bytes[..bytes.len() - CHECKSUM];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - CHECKSUM..] {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    if &bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::Integrity("not a model bundle (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BUNDLE_VERSION,
        });
    }

    let mut cur = Cursor {
        bytes: &body[PREAMBLE..],
        pos: 0,
    };
    let header_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| Error::Integrity(format!("header: {e}")))?;

    let l = header.config.hidden;
    let mut model = Model {
        config: header.config,
        vocab: header.vocab,
        embeddings: None,
        params: MatchParameters {
            pq: PairParameters::zeros(l),
            pa: PairParameters::zeros(l),
            qa: PairParameters::zeros(l),
            v: Vector::zeros(header.config.matching.representation_len(l)),
        },
    };
    let mut ids = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let id = ParamId(t.id);
        if id == crate::model::EMBEDDING_PARAM {
            model.embeddings = Some(EmbeddingTable {
                weights: Matrix::zeros(t.rows, t.cols),
            });
        }
        let values = Matrix::from_vec(t.rows, t.cols, cur.f64s(t.rows * t.cols)?)?;
        model
            .set_parameter(id, &values)
            .map_err(|e| Error::Integrity(format!("tensor {}: {e}", t.name)))?;
        ids.push(id);
    }
    if ids != model.param_ids() {
        return Err(Error::Integrity(
            "tensor list does not match the configuration".into(),
        ));
    }
    model
        .validate()
        .map_err(|e| Error::Integrity(e.to_string()))?;

    let optimizer = match header.optimizer_step {
        None => None,
        Some(step) => {
            let mut first = BTreeMap::new();
            let mut second = BTreeMap::new();
            for moments in [&mut first, &mut second] {
                for &raw in &header.moment_ids {
                    let id = ParamId(raw);
                    let (rows, cols) = model.param_shape(id).ok_or_else(|| {
                        Error::Integrity(format!("moments for unknown tensor {raw}"))
                    })?;
                    moments.insert(id, cur.f64s(rows * cols)?);
                }
            }
            Some(OptimizerState {
                step,
                first,
                second,
            })
        }
    };
    if cur.pos != cur.bytes.len() {
        return Err(Error::Integrity("trailing bytes in payload".into()));
    }
    Ok(ModelBundle {
        version,
        model,
        optimizer,
    })
}

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(bundle)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}
