//! Length-prefixed JSON frames for the oracle service.
//!
//! Each frame is a big-endian `u32` byte count followed by a UTF-8 JSON
//! body.

use std::io::{self, Read, Write};

use duel_align::LabelMode;
use serde::{Deserialize, Serialize};

/// Frames above this size are rejected as malformed.
pub const MAX_FRAME_BYTES: usize = 16 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePair {
    pub ctx: Vec<f64>,
    pub fy: Vec<f64>,
    pub fyp: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub id: u64,
    pub pairs: Vec<WirePair>,
    pub mode: LabelMode,
    pub seed: u64,
}

/// `winners[i]` is 0 when `fy` wins pair `i`, 1 when `fyp` wins;
/// `probs[i]` is `P(fy ≻ fyp)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub id: u64,
    pub winners: Vec<u8>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Labels(LabelResponse),
    Error(ErrorResponse),
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&n| n as usize <= MAX_FRAME_BYTES)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn send<W: Write, M: Serialize>(w: &mut W, msg: &M) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &body)
}

pub fn decode<M: for<'de> Deserialize<'de>>(body: &[u8]) -> io::Result<M> {
    serde_json::from_slice(body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
