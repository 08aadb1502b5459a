//! Middlebury `.flo` files: the float 202021.25, width and height as `i32`,
//! then row-major interleaved `(dx, dy)` pairs, all little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use maskrnn_core::FlowField;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Largest accepted side; guards against allocating for garbage headers.
const MAX_SIDE: i32 = 1 << 15;

/// Parse error with the byte offset where decoding stopped.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte {offset}: {message}")]
pub struct FloError {
    pub offset: u64,
    pub message: String,
}

fn err(offset: usize, message: impl Into<String>) -> FloError {
    FloError {
        offset: offset as u64,
        message: message.into(),
    }
}

fn word(bytes: &[u8], at: usize, what: &str) -> Result<[u8; 4], FloError> {
    bytes
        .get(at..at + 4)
        .map(|b| [b[0], b[1], b[2], b[3]])
        .ok_or_else(|| err(at, format!("truncated file: expected {what}, {} bytes left", bytes.len().saturating_sub(at))))
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, FloError> {
    let magic = f32::from_le_bytes(word(bytes, 0, "magic")?);
    if magic != FLO_MAGIC {
        return Err(err(0, format!("bad magic {magic}, expected {FLO_MAGIC}")));
    }
    let w = i32::from_le_bytes(word(bytes, 4, "width")?);
    let h = i32::from_le_bytes(word(bytes, 8, "height")?);
    if !(1..=MAX_SIDE).contains(&w) {
        return Err(err(4, format!("width {w} out of range")));
    }
    if !(1..=MAX_SIDE).contains(&h) {
        return Err(err(8, format!("height {h} out of range")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + 8 * w * h;
    if bytes.len() < need {
        let whole = 12 + (bytes.len() - 12) / 4 * 4;
        return Err(err(whole, format!("truncated file: {w}x{h} field needs {need} bytes, found {}", bytes.len())));
    }
    if bytes.len() > need {
        return Err(err(need, format!("{} trailing bytes after a {w}x{h} field", bytes.len() - need)));
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            ]
        })
        .collect();
    FlowField::from_vec(w, h, data).map_err(|e| err(12, e.to_string()))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for d in flow.data() {
        out.extend_from_slice(&d[0].to_le_bytes());
        out.extend_from_slice(&d[1].to_le_bytes());
    }
    out
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: e.offset,
        message: e.message,
    })
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_flo(flow)).map_err(|e| Error::io(path, e))
}
