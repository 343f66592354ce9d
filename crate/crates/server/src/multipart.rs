//! `multipart/x-mixed-replace` framing.
//!
//! Every part is, byte for byte:
//!
//! ```text
//! --frame\r\n
//! Content-Type: image/jpeg\r\n
//! Content-Length: <n>\r\n
//! X-Frame-Seq: <seq>\r\n
//! X-Capture-Ts-Ns: <ns>\r\n
//! \r\n
//! <n bytes of image>\r\n
//! ```

use aerolink_core::pipeline::EncodedPart;
use bytes::{BufMut, Bytes, BytesMut};

pub const BOUNDARY: &str = "frame";

pub fn content_type() -> String {
    format!("multipart/x-mixed-replace; boundary={BOUNDARY}")
}

pub fn encode_part(part: &EncodedPart) -> Bytes {
    let head = format!(
        "--{BOUNDARY}\r\nContent-Type: {}\r\nContent-Length: {}\r\nX-Frame-Seq: {}\r\nX-Capture-Ts-Ns: {}\r\n\r\n",
        part.content_type(),
        part.data.len(),
        part.seq,
        part.capture_ts_ns,
    );
    let mut out = BytesMut::with_capacity(head.len() + part.data.len() + 2);
    out.put_slice(head.as_bytes());
    out.put_slice(&part.data);
    out.put_slice(b"\r\n");
    out.freeze()
}

/// A part parsed back out of a multipart body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPart {
    pub content_type: String,
    pub seq: u64,
    pub capture_ts_ns: u64,
    pub data: Vec<u8>,
}

/// Incremental parser for the framing above; used by tests and tools.
#[derive(Debug, Default)]
pub struct PartReader {
    buf: Vec<u8>,
}

impl PartReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete part; `Err` on a framing violation.
    pub fn next_part(&mut self) -> Result<Option<ParsedPart>, String> {
        let Some(head_end) = find(&self.buf, b"\r\n\r\n") else {
            return Ok(None);
        };
        let head = std::str::from_utf8(&self.buf[..head_end]).map_err(|e| e.to_string())?;
        let mut lines = head.split("\r\n");
        if lines.next() != Some("--frame") {
            return Err(format!("part does not start with the boundary: {head:?}"));
        }
        let (mut ct, mut len, mut seq, mut ts) = (None, None, None, None);
        for line in lines {
            let (k, v) = line.split_once(": ").ok_or_else(|| format!("bad header {line:?}"))?;
            match k.to_ascii_lowercase().as_str() {
                "content-type" => ct = Some(v.to_string()),
                "content-length" => len = v.parse::<usize>().ok(),
                "x-frame-seq" => seq = v.parse::<u64>().ok(),
                "x-capture-ts-ns" => ts = v.parse::<u64>().ok(),
                _ => {}
            }
        }
        let len = len.ok_or("missing Content-Length")?;
        let body_start = head_end + 4;
        if self.buf.len() < body_start + len + 2 {
            return Ok(None);
        }
        if &self.buf[body_start + len..body_start + len + 2] != b"\r\n" {
            return Err("part body not followed by CRLF".into());
        }
        let data = self.buf[body_start..body_start + len].to_vec();
        self.buf.drain(..body_start + len + 2);
        Ok(Some(ParsedPart {
            content_type: ct.ok_or("missing Content-Type")?,
            seq: seq.ok_or("missing X-Frame-Seq")?,
            capture_ts_ns: ts.unwrap_or(0),
            data,
        }))
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
