//! Binary embedding payload: `u32` little-endian header length, a JSON
//! header, then the coordinates column-major as little-endian `f64`.

use ctsne_core::EmbeddingMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub n: usize,
    pub d: usize,
    pub restart: usize,
    pub iteration: usize,
    /// False while the job is still running.
    #[serde(rename = "final")]
    pub is_final: bool,
}

pub fn encode(header: &EmbeddingHeader, y: &EmbeddingMatrix) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let coords = y.coords();
    let mut out = Vec::with_capacity(4 + json.len() + 8 * y.n() * y.dim());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for col in coords.columns() {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("payload truncated")]
    Truncated,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload has {got} coordinate bytes, header implies {want}")]
    Length { got: usize, want: usize },
}

pub fn decode(bytes: &[u8]) -> Result<(EmbeddingHeader, Array2<f64>), DecodeError> {
    let len_bytes: [u8; 4] = bytes.get(..4).ok_or(DecodeError::Truncated)?.try_into().unwrap();
    let len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(4..4 + len).ok_or(DecodeError::Truncated)?;
    let header: EmbeddingHeader = serde_json::from_slice(json)?;
    let body = &bytes[4 + len..];
    let want = 8 * header.n * header.d;
    if body.len() != want {
        return Err(DecodeError::Length { got: body.len(), want });
    }
    let mut coords = Array2::zeros((header.n, header.d));
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        let (col, row) = (k / header.n, k % header.n);
        coords[[row, col]] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok((header, coords))
}
