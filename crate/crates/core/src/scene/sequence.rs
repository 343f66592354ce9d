//! `FARSEQ01` sequence files: a 16-byte header (magic `FARSEQ01`, frame
//! count as big-endian u64) followed by that many concatenated `FAR1`
//! messages.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use thiserror::Error;

use super::source::{pace_until, FrameSource, SourceError};
use super::{ConfigError, Renderer, SourceConfig, WorldModel};
use crate::clock::mono_now_ns;
use crate::model::{Frame, StreamId};
use crate::wire::{decode_frame, encode_frame_into, WireError, HEADER_LEN};

pub const SEQUENCE_MAGIC: [u8; 8] = *b"FARSEQ01";
pub const SEQUENCE_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a FARSEQ01 file")]
    BadHeader,
    #[error("sequence truncated after {read} of {expected} frames")]
    Truncated { read: u64, expected: u64 },
    #[error("corrupt frame {index}: {source}")]
    Corrupt { index: u64, source: WireError },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub fn write_sequence<'a>(
    path: impl AsRef<Path>,
    frames: impl ExactSizeIterator<Item = &'a Frame>,
) -> Result<(), SequenceError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&SEQUENCE_MAGIC)?;
    out.write_all(&(frames.len() as u64).to_be_bytes())?;
    let mut buf = Vec::new();
    for f in frames {
        buf.clear();
        encode_frame_into(f, &mut buf);
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Renders `n_frames` synthetic frames of `stream` and writes them.
///
/// Timestamps are nominal (`seq * period`), so the file is a pure function
/// of the config.
pub fn record_sequence(
    config: &SourceConfig,
    stream: StreamId,
    n_frames: u64,
    path: impl AsRef<Path>,
) -> Result<(), SequenceError> {
    config.validate()?;
    let model = WorldModel::new(config);
    let renderer = Renderer::for_config(config);
    let period = config.frame_period_ns();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&SEQUENCE_MAGIC)?;
    out.write_all(&n_frames.to_be_bytes())?;
    let mut buf = Vec::new();
    for n in 0..n_frames {
        let frame = renderer.render(&model.state_at(n), stream, n, n * period);
        buf.clear();
        encode_frame_into(&frame, &mut buf);
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Sequential reader over a sequence file.
pub struct SequenceReader<R> {
    inner: R,
    expected: u64,
    read: u64,
}

impl SequenceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SequenceError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> SequenceReader<R> {
    pub fn new(mut inner: R) -> Result<Self, SequenceError> {
        let mut header = [0u8; SEQUENCE_HEADER_LEN];
        read_full(&mut inner, &mut header)
            .map_err(|_| SequenceError::BadHeader)?
            .then_some(())
            .ok_or(SequenceError::BadHeader)?;
        if header[..8] != SEQUENCE_MAGIC {
            return Err(SequenceError::BadHeader);
        }
        let expected = u64::from_be_bytes(header[8..].try_into().unwrap());
        Ok(Self {
            inner,
            expected,
            read: 0,
        })
    }

    pub fn frame_count(&self) -> u64 {
        self.expected
    }

    fn read_next(&mut self) -> Result<Option<Frame>, SequenceError> {
        if self.read >= self.expected {
            return Ok(None);
        }
        let truncated = SequenceError::Truncated {
            read: self.read,
            expected: self.expected,
        };
        let mut buf = vec![0u8; HEADER_LEN];
        if !read_full(&mut self.inner, &mut buf)? {
            return Err(truncated);
        }
        let payload_len = u32::from_be_bytes(buf[26..30].try_into().unwrap()) as usize;
        // Validate the header before trusting payload_len for an allocation.
        match decode_frame(&buf) {
            Err(WireError::Truncated { .. }) => {}
            Err(source) => {
                return Err(SequenceError::Corrupt {
                    index: self.read,
                    source,
                })
            }
            Ok(_) => unreachable!("header alone never holds a payload"),
        }
        buf.resize(HEADER_LEN + payload_len, 0);
        if !read_full(&mut self.inner, &mut buf[HEADER_LEN..])? {
            return Err(truncated);
        }
        let (frame, _) = decode_frame(&buf).map_err(|source| SequenceError::Corrupt {
            index: self.read,
            source,
        })?;
        self.read += 1;
        Ok(Some(frame))
    }
}

impl<R: Read> Iterator for SequenceReader<R> {
    type Item = Result<Frame, SequenceError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.read_next() {
            Ok(f) => f.map(Ok),
            Err(e) => {
                // Stop after the first error.
                self.read = self.expected;
                Some(Err(e))
            }
        }
    }
}

/// Fills `buf` completely; `Ok(false)` on a clean or partial EOF.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Reads a whole sequence file into memory, unpaced.
pub fn read_sequence(path: impl AsRef<Path>) -> Result<Vec<Frame>, SequenceError> {
    SequenceReader::open(path)?.collect()
}

/// Plays a sequence file at `frame_rate_hz`, re-stamping each frame's
/// capture time at emission; sequence numbers are kept from the file.
pub struct SequencePlayer {
    path: PathBuf,
    reader: SequenceReader<BufReader<File>>,
    peeked: Option<Frame>,
    stream: StreamId,
    period_ns: u64,
    emitted: u64,
    start_ns: Option<u64>,
}

pub fn play_sequence(
    path: impl AsRef<Path>,
    frame_rate_hz: f64,
) -> Result<SequencePlayer, SequenceError> {
    SequencePlayer::open(path, frame_rate_hz)
}

impl SequencePlayer {
    pub fn open(path: impl AsRef<Path>, frame_rate_hz: f64) -> Result<Self, SequenceError> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(ConfigError::FrameRate(frame_rate_hz).into());
        }
        let mut reader = SequenceReader::open(path.as_ref())?;
        let peeked = reader.read_next()?;
        let stream = peeked.as_ref().map_or(StreamId::Fpv, Frame::stream_id);
        Ok(Self {
            path: path.as_ref().to_path_buf(),
            reader,
            peeked,
            stream,
            period_ns: (1e9 / frame_rate_hz).round() as u64,
            emitted: 0,
            start_ns: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn frame_count(&self) -> u64 {
        self.reader.frame_count()
    }

    fn take_next(&mut self) -> Result<Option<Frame>, SequenceError> {
        match self.peeked.take() {
            Some(f) => Ok(Some(f)),
            None => self.reader.read_next(),
        }
    }
}

impl FrameSource for SequencePlayer {
    fn stream_id(&self) -> StreamId {
        self.stream
    }

    fn next_frame(&mut self, stop: &AtomicBool) -> Result<Option<Frame>, SourceError> {
        let Some(frame) = self.take_next()? else {
            return Ok(None);
        };
        let start = *self.start_ns.get_or_insert_with(mono_now_ns);
        if !pace_until(start + self.emitted * self.period_ns, stop) {
            return Ok(None);
        }
        self.emitted += 1;
        Ok(Some(frame.restamped(mono_now_ns())))
    }
}

impl Iterator for SequencePlayer {
    type Item = Result<Frame, SequenceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let never = AtomicBool::new(false);
        match self.next_frame(&never) {
            Ok(f) => f.map(Ok),
            Err(SourceError::Sequence(e)) => Some(Err(e)),
            Err(e) => Some(Err(SequenceError::Io(io::Error::other(e.to_string())))),
        }
    }
}
