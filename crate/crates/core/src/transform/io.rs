//! Lowered graphs in the `BQN1` container (`"lowered": true`).

use serde::{Deserialize, Serialize};

use super::lower::{LBlob, LNode, LoweredGraph};
use super::TransformError;
use crate::layout::PackedTensor;
use crate::model_ir::{
    decode_dense, encode_dense, read_container, split_blobs, write_container, BlobDoc, BlobEncoding, ModelError,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoweredDoc {
    lowered: bool,
    nodes: Vec<LNode>,
    blobs: Vec<BlobDoc>,
}

fn packed_doc(p: &PackedTensor) -> BlobDoc {
    BlobDoc {
        height: p.desc.height,
        width: p.desc.width,
        depth: p.desc.depth,
        dtype: p.desc.dtype,
        layout: p.desc.layout,
        count: p.count,
        encoding: BlobEncoding::Packed,
    }
}

/// Encodes a lowered graph; packed blobs are stored as LE words, plane 0 first.
pub fn serialize_lowered(lg: &LoweredGraph) -> Vec<u8> {
    let doc = LoweredDoc {
        lowered: true,
        nodes: lg.nodes.clone(),
        blobs: lg
            .blobs
            .iter()
            .map(|b| match b {
                LBlob::Dense(t) => BlobDoc::dense(t),
                LBlob::Packed(p) => packed_doc(p),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&doc).expect("lowered JSON is always serializable");
    let mut payload = Vec::new();
    for blob in &lg.blobs {
        match blob {
            LBlob::Dense(t) => encode_dense(t, &mut payload),
            LBlob::Packed(p) => {
                for plane in &p.planes {
                    plane.iter().for_each(|w| payload.extend_from_slice(&w.to_le_bytes()));
                }
            }
        }
    }
    write_container(&json, &payload)
}

/// Decodes and structurally checks a lowered container.
pub fn parse_lowered(bytes: &[u8]) -> Result<LoweredGraph, TransformError> {
    let (doc, payload, payload_offset) = read_container(bytes)?;
    if doc.get("lowered").and_then(|v| v.as_bool()) != Some(true) {
        return Err(ModelError::NotLowered.into());
    }
    let doc: LoweredDoc = serde_json::from_value(doc).map_err(ModelError::from)?;
    let raws = split_blobs(&doc.blobs, payload, payload_offset)?;
    let mut offset = payload_offset;
    let mut blobs = Vec::with_capacity(raws.len());
    for (i, (bdoc, raw)) in doc.blobs.iter().zip(raws).enumerate() {
        let blob = match bdoc.encoding {
            BlobEncoding::Dense => LBlob::Dense(decode_dense(bdoc, raw, i, offset)?),
            BlobEncoding::Packed => {
                let words: Vec<u32> = raw
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let planes = bdoc.dtype.planes().unwrap_or(1);
                let per = words.len() / planes;
                let planes = words.chunks(per.max(1)).map(<[u32]>::to_vec).collect();
                let p = PackedTensor::from_planes(bdoc.desc(), bdoc.count, planes).map_err(|e| {
                    ModelError::BadBlobDescriptor {
                        blob: i,
                        reason: e.to_string(),
                    }
                })?;
                LBlob::Packed(p)
            }
        };
        offset += raw.len();
        blobs.push(blob);
    }
    let lg = LoweredGraph {
        nodes: doc.nodes,
        blobs,
    };
    lg.check()?;
    Ok(lg)
}
