//! Partitioning a [`ByteStream`] into the format's self-contained coded
//! blocks: MP3 frames, Opus packets, JPEG scan segments.
//!
//! Parsers never decode audio samples or pixels. They only locate block
//! boundaries from format markers and headers, so a block's bytes are exactly
//! the bytes a decoder would consume for that unit.

mod jpeg;
mod mp3;
mod opus;

pub use jpeg::{jpeg_scan_segments, jpeg_scan_segments_with, DEFAULT_JPEG_CHUNK_BYTES};
pub use mp3::{mp3_scan_frames, synth_mp3_stream, Mp3FrameHeader, MpegVersion};
pub use opus::opus_extract_packets;

use crate::error::{Error, Result};
use crate::stream::{ByteStream, FormatKind};

/// Kind of coded unit a block represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Mp3Frame,
    OpusPacket,
    JpegSegment,
}

/// A contiguous byte range of the source stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteSpan {
    pub offset: usize,
    pub len: usize,
}

impl ByteSpan {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// One self-contained coded unit recovered from a stream.
///
/// `spans` lists the file ranges whose concatenation equals `bytes`. For MP3
/// frames and JPEG segments this is always a single range; an Opus packet may
/// occupy several ranges when it continues across an Ogg page boundary.
#[derive(Debug, Clone)]
pub struct CompressedBlock {
    pub offset: usize,
    pub bytes: Vec<u8>,
    pub duration_s: f64,
    pub kind: BlockKind,
    pub spans: Vec<ByteSpan>,
}

impl CompressedBlock {
    /// Single-span block whose bytes sit contiguously in the file.
    pub(crate) fn contiguous(
        offset: usize,
        bytes: Vec<u8>,
        duration_s: f64,
        kind: BlockKind,
    ) -> Self {
        let len = bytes.len();
        CompressedBlock { offset, bytes, duration_s, kind, spans: vec![ByteSpan { offset, len }] }
    }

    pub fn length(&self) -> usize {
        self.bytes.len()
    }
}

/// Ordered, non-overlapping list of blocks recovered from one stream.
#[derive(Debug, Clone)]
pub struct BlockSequence {
    pub blocks: Vec<CompressedBlock>,
    pub total_duration_s: f64,
    pub source_format: FormatKind,
    /// Count of tolerated anomalies (dropped truncated tail blocks, skipped
    /// header packets that failed to decode, empty restart spans).
    pub warnings: usize,
}

impl BlockSequence {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Mean block length in bytes, 0.0 for an empty sequence.
    pub fn mean_block_len(&self) -> f64 {
        if self.blocks.is_empty() {
            return 0.0;
        }
        let total: usize = self.blocks.iter().map(|b| b.bytes.len()).sum();
        total as f64 / self.blocks.len() as f64
    }

    /// Check the structural invariants every parser must uphold: strictly
    /// increasing offsets, non-overlapping spans in file order, span/byte
    /// length agreement, and spans inside the stream.
    pub fn validate(&self, stream_len: usize) -> Result<()> {
        let mut prev_end = 0usize;
        let mut prev_offset: Option<usize> = None;
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(p) = prev_offset {
                if b.offset <= p {
                    return Err(Error::Shape(format!(
                        "block {i} offset {} not increasing past {p}",
                        b.offset
                    )));
                }
            }
            prev_offset = Some(b.offset);
            let span_total: usize = b.spans.iter().map(|s| s.len).sum();
            if span_total != b.bytes.len() {
                return Err(Error::Shape(format!(
                    "block {i} spans cover {span_total} bytes but payload is {}",
                    b.bytes.len()
                )));
            }
            if b.spans.is_empty() || b.spans[0].offset != b.offset {
                return Err(Error::Shape(format!("block {i} first span disagrees with offset")));
            }
            for s in &b.spans {
                if s.len == 0 {
                    return Err(Error::Shape(format!("block {i} has empty span")));
                }
                if s.offset < prev_end {
                    return Err(Error::Shape(format!(
                        "block {i} span at {} overlaps previous end {prev_end}",
                        s.offset
                    )));
                }
                if s.end() > stream_len {
                    return Err(Error::Shape(format!(
                        "block {i} span ends at {} beyond stream length {stream_len}",
                        s.end()
                    )));
                }
                prev_end = s.end();
            }
            match b.kind {
                BlockKind::JpegSegment => {
                    if b.duration_s != 0.0 {
                        return Err(Error::Shape(format!("image block {i} has nonzero duration")));
                    }
                }
                _ => {
                    if b.duration_s <= 0.0 {
                        return Err(Error::Shape(format!("audio block {i} has no duration")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dispatch to the parser matching the stream's detected format.
pub fn parse_blocks(s: &ByteStream) -> Result<BlockSequence> {
    match s.format {
        FormatKind::Mp3 => mp3_scan_frames(s),
        FormatKind::OpusOgg => opus_extract_packets(s),
        FormatKind::Jpeg => jpeg_scan_segments(s),
        FormatKind::Unknown => {
            Err(Error::Config("cannot parse blocks from an unknown format".into()))
        }
    }
}

/// Rebuild the stripped input stream from block payloads plus the structural
/// bytes the parser excluded (Ogg page headers, restart markers, pre-scan
/// JPEG segments, dropped tail bytes).
///
/// Block spans are filled from the blocks' own payload bytes; everything
/// outside any block span is copied from `original`. Equality of the result
/// with `original` is the parsers' round-trip oracle: it proves each block's
/// payload matches the file content at the claimed positions and that spans
/// tile the stream consistently.
pub fn reassemble(original: &[u8], seq: &BlockSequence) -> Result<Vec<u8>> {
    seq.validate(original.len())?;
    let mut out = original.to_vec();
    for b in &seq.blocks {
        for s in &b.spans {
            out[s.offset..s.end()].fill(0);
        }
    }
    for b in &seq.blocks {
        let mut taken = 0usize;
        for s in &b.spans {
            out[s.offset..s.end()].copy_from_slice(&b.bytes[taken..taken + s.len]);
            taken += s.len;
        }
    }
    Ok(out)
}
