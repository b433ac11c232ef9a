//! Loading compressed files, format detection, and container-metadata
//! stripping.
//!
//! A [`ByteStream`] is the whole-file byte content of one media file plus a
//! detected [`FormatKind`]. Downstream block parsers expect the stream to be
//! stripped of tag metadata (ID3v1/ID3v2 for MP3) so that sync scanning never
//! sees tag bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Container/codec family of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatKind {
    Mp3,
    OpusOgg,
    Jpeg,
    Unknown,
}

impl std::fmt::Display for FormatKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FormatKind::Mp3 => "mp3",
            FormatKind::OpusOgg => "opus-ogg",
            FormatKind::Jpeg => "jpeg",
            FormatKind::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

/// Raw compressed bytes of one media file.
#[derive(Debug, Clone)]
pub struct ByteStream {
    pub bytes: Vec<u8>,
    pub source_path: String,
    pub format: FormatKind,
}

impl ByteStream {
    /// Wrap in-memory bytes as a stream with no known source file.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::EmptyStream("<memory>".into()));
        }
        Ok(ByteStream { bytes, source_path: "<memory>".into(), format: FormatKind::Unknown })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Read a whole file into a [`ByteStream`]. Format is left `Unknown`.
pub fn load_stream(path: impl AsRef<Path>) -> Result<ByteStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.is_empty() {
        return Err(Error::EmptyStream(path.display().to_string()));
    }
    Ok(ByteStream { bytes, source_path: path.display().to_string(), format: FormatKind::Unknown })
}

/// Identify the stream's format from its leading magic bytes.
///
/// Pure and deterministic; `Unknown` is a value, not an error, so callers can
/// report unrecognized files gracefully.
pub fn detect_format(s: &ByteStream) -> FormatKind {
    let b = &s.bytes;
    if b.len() >= 2 && b[0] == 0xFF && b[1] == 0xD8 {
        return FormatKind::Jpeg;
    }
    if b.starts_with(b"OggS") && first_ogg_payload_is_opus_head(b) {
        return FormatKind::OpusOgg;
    }
    if b.starts_with(b"ID3") {
        return FormatKind::Mp3;
    }
    // MP3 frame sync: 11 set bits at a byte boundary.
    if b.len() >= 2 && b[0] == 0xFF && b[1] & 0xE0 == 0xE0 {
        return FormatKind::Mp3;
    }
    FormatKind::Unknown
}

/// Convenience: load, detect, and tag a stream in one step.
pub fn open_stream(path: impl AsRef<Path>) -> Result<ByteStream> {
    let mut s = load_stream(path)?;
    s.format = detect_format(&s);
    Ok(s)
}

fn first_ogg_payload_is_opus_head(b: &[u8]) -> bool {
    // Ogg page: 27-byte header, then `nsegs` lacing values, then payload.
    if b.len() < 28 {
        return false;
    }
    let nsegs = b[26] as usize;
    let payload_start = 27 + nsegs;
    b.len() >= payload_start + 8 && &b[payload_start..payload_start + 8] == b"OpusHead"
}

/// Remove tag metadata the block parsers must not see.
///
/// MP3: a leading ID3v2 tag (10-byte header plus its syncsafe declared size,
/// plus a 10-byte footer when the footer flag is set) and a trailing 128-byte
/// ID3v1 `TAG` trailer are removed. JPEG and Ogg/Opus streams pass through
/// unchanged: JPEG APPn/COM segments are skipped by the marker parser, and
/// Ogg demuxing happens downstream.
pub fn strip_metadata(s: &ByteStream) -> Result<ByteStream> {
    match s.format {
        FormatKind::Mp3 => strip_mp3_tags(s),
        _ => Ok(s.clone()),
    }
}

fn strip_mp3_tags(s: &ByteStream) -> Result<ByteStream> {
    let mut start = 0usize;
    let mut end = s.bytes.len();

    if s.bytes.len() >= 10 && s.bytes.starts_with(b"ID3") {
        let size = syncsafe_u32(&s.bytes[6..10]).ok_or_else(|| {
            Error::Metadata(format!("ID3v2 size bytes not syncsafe in {}", s.source_path))
        })? as usize;
        let footer = s.bytes[5] & 0x10 != 0;
        let total = 10 + size + if footer { 10 } else { 0 };
        if total > s.bytes.len() {
            return Err(Error::Metadata(format!(
                "ID3v2 declared size {} exceeds stream length {}",
                total,
                s.bytes.len()
            )));
        }
        start = total;
    }

    if end - start >= 128 && &s.bytes[end - 128..end - 125] == b"TAG" {
        end -= 128;
    }

    if start >= end {
        return Err(Error::EmptyStream(format!("{} is all metadata", s.source_path)));
    }

    Ok(ByteStream {
        bytes: s.bytes[start..end].to_vec(),
        source_path: s.source_path.clone(),
        format: s.format,
    })
}

/// Decode a 4-byte syncsafe integer (7 bits per byte, high bit clear).
fn syncsafe_u32(b: &[u8]) -> Option<u32> {
    if b.len() != 4 || b.iter().any(|&x| x & 0x80 != 0) {
        return None;
    }
    Some(((b[0] as u32) << 21) | ((b[1] as u32) << 14) | ((b[2] as u32) << 7) | b[3] as u32)
}
