//! SPAC container: one activation matrix with a JSON identity header.
//!
//! ```text
//! offset  size         field
//! 0       4            magic "SPAC"
//! 4       4            version (u32 LE) = 1
//! 8       8            header_len (u64 LE)
//! 16      header_len   UTF-8 JSON header
//! ..      rows*cols*4  f32 LE payload, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivationRecord, Component, Condition, StoreError};

pub const MAGIC: &[u8; 4] = b"SPAC";
pub const VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";
/// Bytes before the JSON header.
pub const PREAMBLE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    model_id: String,
    component: Component,
    layer_index: u64,
    sample_id: String,
    condition: Condition,
    rows: u64,
    cols: u64,
    dtype: String,
}

pub fn encode_record(r: &ActivationRecord) -> Result<Vec<u8>, StoreError> {
    r.validate()?;
    let header = Header {
        model_id: r.model_id.clone(),
        component: r.component,
        layer_index: r.layer_index as u64,
        sample_id: r.sample_id.clone(),
        condition: r.condition,
        rows: r.rows as u64,
        cols: r.cols as u64,
        dtype: DTYPE_F32LE.to_string(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| StoreError::InvalidHeader(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE_LEN + json.len() + 4 * r.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in &r.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Parses a complete SPAC image. Sizes are checked against the bytes that
/// are actually present before anything is allocated.
pub fn decode_record(bytes: &[u8]) -> Result<ActivationRecord, StoreError> {
    if bytes.len() < MAGIC.len() {
        return Err(StoreError::Truncated {
            section: "magic",
            needed: MAGIC.len() as u64,
            available: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(StoreError::BadMagic(found));
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(StoreError::Truncated {
            section: "preamble",
            needed: PREAMBLE_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[PREAMBLE_LEN..];
    if header_len > rest.len() as u64 {
        return Err(StoreError::Truncated {
            section: "header",
            needed: header_len,
            available: rest.len() as u64,
        });
    }
    let (header_bytes, payload) = rest.split_at(header_len as usize);
    let header_text = std::str::from_utf8(header_bytes)
        .map_err(|e| StoreError::InvalidHeader(format!("header is not UTF-8: {e}")))?;
    let header: Header = serde_json::from_str(header_text).map_err(|e| StoreError::InvalidHeader(e.to_string()))?;
    if header.dtype != DTYPE_F32LE {
        return Err(StoreError::UnsupportedDtype(header.dtype));
    }
    if header.rows == 0 || header.cols == 0 {
        return Err(StoreError::InvalidHeader(format!(
            "matrix shape {}x{} has an empty dimension",
            header.rows, header.cols
        )));
    }
    let overflow = || StoreError::DimensionOverflow {
        rows: header.rows,
        cols: header.cols,
    };
    let count = header.rows.checked_mul(header.cols).ok_or_else(overflow)?;
    let payload_len = count.checked_mul(4).ok_or_else(overflow)?;
    let (rows, cols) = match (usize::try_from(header.rows), usize::try_from(header.cols)) {
        (Ok(r), Ok(c)) => (r, c),
        _ => return Err(overflow()),
    };
    let layer_index = usize::try_from(header.layer_index)
        .map_err(|_| StoreError::InvalidHeader(format!("layer_index {} too large", header.layer_index)))?;
    let available = payload.len() as u64;
    if available < payload_len {
        return Err(StoreError::Truncated {
            section: "payload",
            needed: payload_len,
            available,
        });
    }
    if available > payload_len {
        return Err(StoreError::TrailingBytes(available - payload_len));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let record = ActivationRecord {
        model_id: header.model_id,
        component: header.component,
        layer_index,
        sample_id: header.sample_id,
        condition: header.condition,
        rows,
        cols,
        data,
    };
    record.validate()?;
    Ok(record)
}

/// Validates, then writes. Nothing is created on disk if validation fails.
pub fn write_record(r: &ActivationRecord, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let bytes = encode_record(r)?;
    fs::write(path, bytes).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_record(path: impl AsRef<Path>) -> Result<ActivationRecord, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_record(&bytes)
}
