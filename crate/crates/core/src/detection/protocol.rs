//! External detector wire protocol, one request/response pair at a time
//! over a byte-stream connection. All integers and floats big-endian.
//!
//! ```text
//! request   "FDET" | request_id u64 | FAR1 frame message
//! response  "FRES" | request_id u64 | box_count u16 |
//!           box_count × ( class_id u16 | confidence f32 | x f32 | y f32 | w f32 | h f32 )
//! ```
//!
//! Box coordinates are normalized to the frame as in [`BBox`].

use bytes::{Buf, BufMut};
use thiserror::Error;

use crate::model::{BBox, Detection, Frame};
use crate::wire::{self, WireError};

pub const REQUEST_MAGIC: [u8; 4] = *b"FDET";
pub const RESPONSE_MAGIC: [u8; 4] = *b"FRES";
pub const RESPONSE_HEADER_LEN: usize = 14;
pub const BOX_RECORD_LEN: usize = 22;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad magic")]
    BadMagic,
    #[error("need at least {needed} bytes")]
    Truncated { needed: usize },
    #[error("invalid message: {0}")]
    Invalid(String),
}

pub fn encode_request(request_id: u64, frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + wire::encoded_len(frame));
    out.put_slice(&REQUEST_MAGIC);
    out.put_u64(request_id);
    wire::encode_frame_into(frame, &mut out);
    out
}

/// Decodes a request at the start of `bytes`; returns it and its length.
pub fn decode_request(bytes: &[u8]) -> Result<(u64, Frame, usize), ProtocolError> {
    check_magic(bytes, &REQUEST_MAGIC)?;
    if bytes.len() < 12 {
        return Err(ProtocolError::Truncated { needed: 12 });
    }
    let id = (&bytes[4..12]).get_u64();
    match wire::decode_frame(&bytes[12..]) {
        Ok((frame, used)) => Ok((id, frame, 12 + used)),
        Err(WireError::Truncated { needed, .. }) => {
            Err(ProtocolError::Truncated { needed: 12 + needed })
        }
        Err(e) => Err(ProtocolError::Invalid(e.to_string())),
    }
}

pub fn encode_response(request_id: u64, detections: &[Detection]) -> Vec<u8> {
    let count = detections.len().min(u16::MAX as usize);
    let mut out = Vec::with_capacity(RESPONSE_HEADER_LEN + count * BOX_RECORD_LEN);
    out.put_slice(&RESPONSE_MAGIC);
    out.put_u64(request_id);
    out.put_u16(count as u16);
    for d in &detections[..count] {
        out.put_u16(d.class_id);
        out.put_f32(d.confidence);
        out.put_f32(d.bbox.x as f32);
        out.put_f32(d.bbox.y as f32);
        out.put_f32(d.bbox.w as f32);
        out.put_f32(d.bbox.h as f32);
    }
    out
}

/// Decodes a response at the start of `bytes`; returns it and its length.
pub fn decode_response(bytes: &[u8]) -> Result<(u64, Vec<Detection>, usize), ProtocolError> {
    check_magic(bytes, &RESPONSE_MAGIC)?;
    if bytes.len() < RESPONSE_HEADER_LEN {
        return Err(ProtocolError::Truncated {
            needed: RESPONSE_HEADER_LEN,
        });
    }
    let mut hdr = &bytes[4..RESPONSE_HEADER_LEN];
    let id = hdr.get_u64();
    let count = hdr.get_u16() as usize;
    let total = RESPONSE_HEADER_LEN + count * BOX_RECORD_LEN;
    if bytes.len() < total {
        return Err(ProtocolError::Truncated { needed: total });
    }
    let mut body = &bytes[RESPONSE_HEADER_LEN..total];
    let mut detections = Vec::with_capacity(count);
    for i in 0..count {
        let class_id = body.get_u16();
        let confidence = body.get_f32();
        let [x, y, w, h] = [(); 4].map(|_| body.get_f32() as f64);
        let bbox = BBox::new(x, y, w, h)
            .map_err(|e| ProtocolError::Invalid(format!("box {i}: {e}")))?;
        let det = Detection::new(class_id, confidence, bbox)
            .map_err(|e| ProtocolError::Invalid(format!("box {i}: {e}")))?;
        detections.push(det);
    }
    Ok((id, detections, total))
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<(), ProtocolError> {
    let n = bytes.len().min(4);
    if bytes[..n] != magic[..n] {
        Err(ProtocolError::BadMagic)
    } else {
        Ok(())
    }
}
