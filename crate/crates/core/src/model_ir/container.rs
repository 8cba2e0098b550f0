//! `BQN1` model container.
//!
//! ```text
//! magic "BQN1" | version u16 LE | json_len u64 LE | graph JSON (UTF-8) | blobs
//! ```
//!
//! Blobs follow the JSON back to back in blob-index order. Dense blobs are raw
//! little-endian (f32/i32: 4 bytes per element, u2: one byte per code, bin1:
//! one byte per weight with 0x00 = -1 and 0x01 = +1). Packed blobs, used only
//! by lowered containers, are u32 words little-endian, plane 0 then plane 1.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, GraphError, Node};
use super::tensor::{BlobData, BlobError, DType, Layout, TensorBlob, TensorDesc};

pub const MAGIC: &[u8; 4] = b"BQN1";
pub const VERSION: u16 = 1;
impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Json(e.to_string())
    }
}

const HEADER_LEN: usize = 4 + 2 + 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("bad magic {found:02x?}, expected \"BQN1\"")]
    BadMagic { found: Vec<u8> },
    #[error("container version {0} is not supported (expected {VERSION})")]
    VersionUnsupported(u16),
    #[error("container header truncated at offset {offset}")]
    TruncatedHeader { offset: usize },
    #[error("blob #{blob} at offset {offset} needs {needed} bytes, only {available} left")]
    TruncatedBlob {
        blob: usize,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{count} unexpected bytes after the last blob at offset {offset}")]
    TrailingData { offset: usize, count: usize },
    #[error("blob #{blob} at offset {offset}: {source}")]
    InvalidBlob {
        blob: usize,
        offset: usize,
        source: BlobError,
    },
    #[error("blob #{blob}: {reason}")]
    BadBlobDescriptor { blob: usize, reason: String },
    #[error("graph JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("container holds a lowered model; expected an unlowered graph")]
    LoweredContainer,
    #[error("container holds an unlowered graph; expected a lowered model")]
    NotLowered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlobEncoding {
    #[default]
    Dense,
    Packed,
}

/// Blob descriptor as it appears in the container JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobDoc {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub dtype: DType,
    pub layout: Layout,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub encoding: BlobEncoding,
}

fn one() -> usize {
    1
}

impl BlobDoc {
    pub fn dense(blob: &TensorBlob) -> Self {
        let d = blob.desc;
        Self {
            height: d.height,
            width: d.width,
            depth: d.depth,
            dtype: d.dtype,
            layout: d.layout,
            count: blob.count,
            encoding: BlobEncoding::Dense,
        }
    }

    pub fn desc(&self) -> TensorDesc {
        TensorDesc::new(self.height, self.width, self.depth, self.dtype, self.layout)
    }

    /// Byte size of the payload this descriptor announces.
    pub fn byte_len(&self) -> Option<usize> {
        let per = match self.encoding {
            BlobEncoding::Dense => self.height * self.width * self.depth * self.dtype.dense_bytes(),
            BlobEncoding::Packed => {
                let planes = self.dtype.planes()?;
                planes * self.height * self.width * self.depth.div_ceil(32) * 4
            }
        };
        per.checked_mul(self.count)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    #[serde(default)]
    lowered: bool,
    nodes: Vec<Node>,
    #[serde(default)]
    blobs: Vec<BlobDoc>,
}

/// Splits a container into its JSON document and blob payload.
pub(crate) fn read_container(bytes: &[u8]) -> Result<(serde_json::Value, &[u8], usize), ModelError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::TruncatedHeader { offset: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ModelError::VersionUnsupported(version));
    }
    let json_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let json_end = usize::try_from(json_len)
        .ok()
        .and_then(|l| HEADER_LEN.checked_add(l))
        .filter(|&end| end <= bytes.len())
        .ok_or(ModelError::TruncatedHeader { offset: bytes.len() })?;
    let doc: serde_json::Value = serde_json::from_slice(&bytes[HEADER_LEN..json_end])?;
    Ok((doc, &bytes[json_end..], json_end))
}

pub(crate) fn write_container(json: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json);
    out.extend_from_slice(payload);
    out
}

/// True when the container carries a lowered model.
pub fn is_lowered(bytes: &[u8]) -> Result<bool, ModelError> {
    let (doc, _, _) = read_container(bytes)?;
    Ok(doc.get("lowered").and_then(|v| v.as_bool()).unwrap_or(false))
}

/// Walks the payload according to `docs`, yielding each blob's bytes.
pub(crate) fn split_blobs<'a>(
    docs: &[BlobDoc],
    payload: &'a [u8],
    base_offset: usize,
) -> Result<Vec<&'a [u8]>, ModelError> {
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let needed = doc.byte_len().ok_or_else(|| ModelError::BadBlobDescriptor {
            blob: i,
            reason: format!("{:?} cannot use {:?} encoding", doc.dtype, doc.encoding),
        })?;
        let available = payload.len() - cursor;
        if needed > available {
            return Err(ModelError::TruncatedBlob {
                blob: i,
                offset: base_offset + cursor,
                needed,
                available,
            });
        }
        out.push(&payload[cursor..cursor + needed]);
        cursor += needed;
    }
    if cursor != payload.len() {
        return Err(ModelError::TrailingData {
            offset: base_offset + cursor,
            count: payload.len() - cursor,
        });
    }
    Ok(out)
}

pub(crate) fn decode_dense(doc: &BlobDoc, raw: &[u8], blob: usize, offset: usize) -> Result<TensorBlob, ModelError> {
    if doc.encoding != BlobEncoding::Dense {
        return Err(ModelError::BadBlobDescriptor {
            blob,
            reason: "packed blobs are only valid in lowered containers".into(),
        });
    }
    let data = match doc.dtype {
        DType::F32 => BlobData::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I32 => BlobData::I32(
            raw.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::U2 => BlobData::U2(raw.to_vec()),
        DType::Bin1 => {
            let mut v = Vec::with_capacity(raw.len());
            for (index, &b) in raw.iter().enumerate() {
                v.push(match b {
                    0 => -1,
                    1 => 1,
                    other => {
                        return Err(ModelError::InvalidBlob {
                            blob,
                            offset: offset + index,
                            source: BlobError::OutOfRange {
                                dtype: DType::Bin1,
                                index,
                                value: other as i64,
                            },
                        })
                    }
                });
            }
            BlobData::Bin1(v)
        }
    };
    TensorBlob::new(doc.desc(), doc.count, data).map_err(|source| ModelError::InvalidBlob { blob, offset, source })
}

pub(crate) fn encode_dense(blob: &TensorBlob, out: &mut Vec<u8>) {
    match &blob.data {
        BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        BlobData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        BlobData::U2(v) => out.extend_from_slice(v),
        BlobData::Bin1(v) => out.extend(v.iter().map(|&x| u8::from(x > 0))),
    }
}

/// Decodes an unlowered graph container.
pub fn parse_model(bytes: &[u8]) -> Result<Graph, ModelError> {
    let (doc, payload, payload_offset) = read_container(bytes)?;
    if doc.get("lowered").and_then(|v| v.as_bool()) == Some(true) {
        return Err(ModelError::LoweredContainer);
    }
    let doc: GraphDoc = serde_json::from_value(doc)?;
    let raws = split_blobs(&doc.blobs, payload, payload_offset)?;
    let mut offset = payload_offset;
    let mut blobs = Vec::with_capacity(raws.len());
    for (i, (bdoc, raw)) in doc.blobs.iter().zip(raws).enumerate() {
        blobs.push(decode_dense(bdoc, raw, i, offset)?);
        offset += raw.len();
    }
    Ok(Graph::new(doc.nodes, blobs)?)
}

/// Encodes a graph; nodes are written in topological order.
pub fn serialize_model(g: &Graph) -> Vec<u8> {
    let doc = GraphDoc {
        lowered: false,
        nodes: g.nodes().cloned().collect(),
        blobs: g.blobs().iter().map(BlobDoc::dense).collect(),
    };
    let json = serde_json::to_vec(&doc).expect("graph JSON is always serializable");
    let mut payload = Vec::with_capacity(g.blobs().iter().map(|b| b.dense_bytes()).sum());
    for blob in g.blobs() {
        encode_dense(blob, &mut payload);
    }
    write_container(&json, &payload)
}
