//! The `FAR1` frame wire format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FAR1" (0x46 0x41 0x52 0x31)
//!      4     1  stream_id      0 = FPV, 1 = BOTTOM
//!      5     8  seq
//!     13     8  capture_ts_ns
//!     21     2  width
//!     23     2  height
//!     25     1  pixel_format   0 = RGB8
//!     26     4  payload_len    must equal width*height*3
//!     30     n  payload
//! ```
//!
//! All integers are big-endian. Messages are self-delimiting and may be
//! concatenated on a byte stream.

use bytes::{Buf, BufMut, BytesMut};
use thiserror::Error;

use crate::model::{rgb_len, Frame, PixelFormat, StreamId};

pub const FRAME_MAGIC: [u8; 4] = *b"FAR1";
pub const HEADER_LEN: usize = 30;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("not at a frame boundary (bad magic)")]
    BadMagic,
    /// More bytes are needed; `needed` is the total message length when known.
    #[error("truncated message: have {available} bytes, need {needed}")]
    Truncated { available: usize, needed: usize },
    #[error("frame invariant violated: {0}")]
    InvariantViolation(String),
}

/// Encoded size of a frame, header included.
pub fn encoded_len(frame: &Frame) -> usize {
    HEADER_LEN + frame.payload().len()
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(frame));
    encode_frame_into(frame, &mut out);
    out
}

pub fn encode_frame_into(frame: &Frame, out: &mut impl BufMut) {
    out.put_slice(&FRAME_MAGIC);
    out.put_u8(frame.stream_id().wire_byte());
    out.put_u64(frame.seq());
    out.put_u64(frame.capture_ts_ns());
    out.put_u16(frame.width());
    out.put_u16(frame.height());
    out.put_u8(frame.pixel_format().wire_byte());
    out.put_u32(frame.payload().len() as u32);
    out.put_slice(frame.payload());
}

/// Decodes the message at the start of `bytes`, returning the frame and the
/// number of bytes it occupied.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
    let magic_have = bytes.len().min(4);
    if bytes[..magic_have] != FRAME_MAGIC[..magic_have] {
        return Err(WireError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            available: bytes.len(),
            needed: HEADER_LEN,
        });
    }
    let mut hdr = &bytes[4..HEADER_LEN];
    let stream_byte = hdr.get_u8();
    let seq = hdr.get_u64();
    let ts = hdr.get_u64();
    let width = hdr.get_u16();
    let height = hdr.get_u16();
    let format_byte = hdr.get_u8();
    let payload_len = hdr.get_u32() as usize;

    let stream = StreamId::from_wire_byte(stream_byte)
        .ok_or_else(|| WireError::InvariantViolation(format!("unknown stream id {stream_byte}")))?;
    PixelFormat::from_wire_byte(format_byte).ok_or_else(|| {
        WireError::InvariantViolation(format!("unknown pixel format {format_byte}"))
    })?;
    if width == 0 || height == 0 {
        return Err(WireError::InvariantViolation(format!(
            "empty frame {width}x{height}"
        )));
    }
    let expected = rgb_len(width, height);
    if payload_len != expected {
        return Err(WireError::InvariantViolation(format!(
            "payload_len {payload_len} != {width}x{height}x3"
        )));
    }
    let total = HEADER_LEN + payload_len;
    if bytes.len() < total {
        return Err(WireError::Truncated {
            available: bytes.len(),
            needed: total,
        });
    }
    let payload = bytes[HEADER_LEN..total].to_vec();
    let frame = Frame::new(stream, seq, ts, width, height, payload)
        .map_err(|e| WireError::InvariantViolation(e.to_string()))?;
    Ok((frame, total))
}

/// Incremental decoder for a byte stream of concatenated messages.
///
/// Garbage between messages is skipped by scanning forward for the next
/// magic; each contiguous run of skipped bytes counts as one resync.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: BytesMut,
    resyncs: u64,
    in_resync: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(data);
    }

    pub fn resyncs(&self) -> u64 {
        self.resyncs
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, or `None` if more input is needed.
    pub fn next_frame(&mut self) -> Option<Frame> {
        loop {
            if self.buf.is_empty() {
                return None;
            }
            match decode_frame(&self.buf) {
                Ok((frame, used)) => {
                    self.buf.advance(used);
                    self.in_resync = false;
                    return Some(frame);
                }
                Err(WireError::Truncated { .. }) => return None,
                Err(WireError::BadMagic) | Err(WireError::InvariantViolation(_)) => {
                    if !self.in_resync {
                        self.resyncs += 1;
                        self.in_resync = true;
                    }
                    self.skip_to_next_magic();
                }
            }
        }
    }

    fn skip_to_next_magic(&mut self) {
        // Never match at offset 0: that position just failed.
        let hay = &self.buf[1..];
        if let Some(pos) = hay.windows(4).position(|w| w == FRAME_MAGIC) {
            self.buf.advance(pos + 1);
            return;
        }
        // Keep a tail that may be the start of a magic split across reads.
        let keep = (1..=3)
            .rev()
            .find(|&k| k < self.buf.len() && self.buf[self.buf.len() - k..] == FRAME_MAGIC[..k])
            .unwrap_or(0);
        let drop = self.buf.len() - keep;
        self.buf.advance(drop);
    }
}
