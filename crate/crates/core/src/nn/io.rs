//! Model file container.
//!
//! ```text
//! magic        8 bytes  "EMOBLEND"
//! version      u32 LE
//! meta_len     u64 LE
//! weight_count u64 LE
//! metadata     meta_len bytes of JSON
//! weights      weight_count f64 LE, serialization order of `Params::tensors`
//! checksum     32 bytes, SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelMetadata, Params};
use crate::error::{Error, Result};
use crate::featsel::FeatureMask;

pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"EMOBLEND";
const PREAMBLE_LEN: usize = 8 + 4 + 8 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    blendshape_names: Vec<String>,
    mask: Vec<usize>,
    kept_names: Vec<String>,
    class_names: Vec<String>,
    in_dim: usize,
    layer_units: Vec<usize>,
    num_classes: usize,
    weight_order: String,
    #[serde(flatten)]
    metadata: ModelMetadata,
}

pub fn encode_model(m: &Model) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        blendshape_names: m.mask.source_names.clone(),
        mask: m.mask.kept_indices.clone(),
        kept_names: m.mask.kept_names().into_iter().map(str::to_string).collect(),
        class_names: m.class_names.clone(),
        in_dim: m.params.in_dim(),
        layer_units: m.params.layer_units(),
        num_classes: m.params.head.out_dim,
        weight_order: "per layer: W[4u x in], U[4u x u], b[4u] with gate blocks i,f,g,o; then head W[3 x u], b[3]"
            .into(),
        metadata: m.metadata.clone(),
    };
    let meta = serde_json::to_vec_pretty(&header).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let weights = m.params.flatten();

    let mut buf = Vec::with_capacity(PREAMBLE_LEN + meta.len() + weights.len() * 8 + CHECKSUM_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    for w in &weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(digest.as_slice());
    Ok(buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Truncated {
            expected: PREAMBLE_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let weight_count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let expected = meta_len
        .checked_add(weight_count.saturating_mul(8))
        .and_then(|v| v.checked_add(PREAMBLE_LEN + CHECKSUM_LEN))
        .ok_or_else(|| Error::ModelFormat("section lengths overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let body_end = expected - CHECKSUM_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Checksum);
    }

    let meta_end = PREAMBLE_LEN + meta_len;
    let header: Header =
        serde_json::from_slice(&bytes[PREAMBLE_LEN..meta_end]).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if header.format_version != version {
        return Err(Error::ModelFormat("metadata version disagrees with preamble".into()));
    }
    if header.num_classes != crate::dataio::NUM_CLASSES || header.class_names.len() != header.num_classes {
        return Err(Error::ModelFormat(format!("unsupported class count {}", header.num_classes)));
    }
    let weights: Vec<f64> = bytes[meta_end..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut params =
        Params::zeros(header.in_dim, &header.layer_units).map_err(|e| Error::ModelFormat(e.to_string()))?;
    params
        .assign_flat(&weights)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    let mask = FeatureMask::new(header.mask, header.blendshape_names).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let mut model = Model::new(params, mask).map_err(|e| Error::ModelFormat(e.to_string()))?;
    model.class_names = header.class_names;
    model.metadata = header.metadata;
    Ok(model)
}

pub fn save_model(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(m)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::canonical_names;

    fn model() -> Model {
        let mask = FeatureMask::new(vec![1, 4, 9, 25, 44, 45], canonical_names()).unwrap();
        let mut m = Model::init(&[5, 3], mask, 12).unwrap();
        m.metadata.train_config_digest = Some("abc".into());
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = decode_model(&encode_model(&m).unwrap()).unwrap();
        let bits = |p: &Params| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m.params), bits(&back.params));
        assert_eq!(m, back);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&model()).unwrap();
        let n = bytes.len();
        bytes[n - CHECKSUM_LEN - 5] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(Error::Checksum)));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = encode_model(&model()).unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(decode_model(&bytes), Err(Error::Version { found, .. }) if found == FORMAT_VERSION + 1));
    }

    #[test]
    fn truncated_file_is_detected() {
        let bytes = encode_model(&model()).unwrap();
        assert!(matches!(decode_model(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_model(&bytes[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_model(&model()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn metadata_is_readable_json() {
        let bytes = encode_model(&model()).unwrap();
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..PREAMBLE_LEN + meta_len]).unwrap();
        assert!(text.contains("\"mouthSmileLeft\""));
        assert!(text.contains("\"layer_units\""));
    }
}
