//! JPEG scan segmentation.
//!
//! Marker segments are walked up to SOS, then the entropy-coded scan is
//! traversed with byte-stuffing awareness: `FF 00` is data, `FF D0..=D7` are
//! restart markers, `FF D9` ends the image. When restart markers are present
//! each inter-restart span becomes one block (marker bytes excluded);
//! otherwise the scan falls back to fixed-size chunks so images without
//! restart intervals still yield a usable block partition.

use crate::error::{Error, Result};
use crate::parse::{BlockKind, BlockSequence, CompressedBlock};
use crate::stream::{ByteStream, FormatKind};

/// Fallback chunk size, mirroring the audio formats' typical block length so
/// one tokenizer configuration covers all formats.
pub const DEFAULT_JPEG_CHUNK_BYTES: usize = 144;

/// Segment a JPEG stream with the default fallback chunk size.
pub fn jpeg_scan_segments(s: &ByteStream) -> Result<BlockSequence> {
    jpeg_scan_segments_with(s, DEFAULT_JPEG_CHUNK_BYTES)
}

/// Segment a JPEG stream, chunking scans without restart markers into
/// `target_chunk_bytes`-sized blocks (final chunk shorter).
pub fn jpeg_scan_segments_with(s: &ByteStream, target_chunk_bytes: usize) -> Result<BlockSequence> {
    if target_chunk_bytes == 0 {
        return Err(Error::Config("target_chunk_bytes must be at least 1".into()));
    }
    let b = &s.bytes;
    let n = b.len();
    if n < 2 || b[0] != 0xFF || b[1] != 0xD8 {
        return Err(Error::JpegParse("missing SOI marker".into()));
    }

    let scan_start = find_sos(b)?;
    let (spans, restarts_seen, mut warnings) = walk_scan(b, scan_start)?;

    let mut blocks = Vec::new();
    if restarts_seen {
        for (start, end) in spans {
            if start == end {
                warnings += 1; // adjacent restart markers: empty span
                continue;
            }
            blocks.push(CompressedBlock::contiguous(
                start,
                b[start..end].to_vec(),
                0.0,
                BlockKind::JpegSegment,
            ));
        }
    } else if let Some(&(start, end)) = spans.first() {
        let mut pos = start;
        while pos < end {
            let chunk_end = (pos + target_chunk_bytes).min(end);
            blocks.push(CompressedBlock::contiguous(
                pos,
                b[pos..chunk_end].to_vec(),
                0.0,
                BlockKind::JpegSegment,
            ));
            pos = chunk_end;
        }
    }

    Ok(BlockSequence {
        blocks,
        total_duration_s: 0.0,
        source_format: FormatKind::Jpeg,
        warnings,
    })
}

/// Walk marker segments from SOI to SOS and return the offset of the first
/// entropy-coded byte.
fn find_sos(b: &[u8]) -> Result<usize> {
    let n = b.len();
    let mut pos = 2usize;
    loop {
        // Fill bytes: markers may be preceded by extra 0xFF bytes.
        while pos + 1 < n && b[pos] == 0xFF && b[pos + 1] == 0xFF {
            pos += 1;
        }
        if pos + 1 >= n {
            return Err(Error::JpegParse("stream ended before SOS".into()));
        }
        if b[pos] != 0xFF {
            return Err(Error::JpegParse(format!("expected marker at offset {pos}")));
        }
        let marker = b[pos + 1];
        pos += 2;
        match marker {
            0xD9 => return Err(Error::JpegParse("EOI before any SOS".into())),
            0xD8 => return Err(Error::JpegParse("unexpected SOI inside stream".into())),
            0x01 | 0xD0..=0xD7 => {} // standalone markers carry no length
            0xDA => {
                let len = read_segment_len(b, pos)?;
                return Ok(pos + len);
            }
            _ => {
                // All other markers (APPn, COM, DQT, DHT, SOF, DRI, ...)
                // carry a big-endian length that includes its own two bytes.
                let len = read_segment_len(b, pos)?;
                pos += len;
            }
        }
    }
}

fn read_segment_len(b: &[u8], pos: usize) -> Result<usize> {
    if pos + 2 > b.len() {
        return Err(Error::JpegParse("truncated marker length".into()));
    }
    let len = u16::from_be_bytes([b[pos], b[pos + 1]]) as usize;
    if len < 2 || pos + len > b.len() {
        return Err(Error::JpegParse(format!("bad segment length {len} at offset {pos}")));
    }
    Ok(len)
}

/// Traverse the entropy-coded scan. Returns the data spans split at restart
/// markers, whether any restart marker was seen, and a warning count (set
/// when the stream ends without EOI).
fn walk_scan(b: &[u8], start: usize) -> Result<(Vec<(usize, usize)>, bool, usize)> {
    let n = b.len();
    let mut spans = Vec::new();
    let mut span_start = start;
    let mut restarts = false;
    let mut warnings = 0usize;
    let mut pos = start;

    loop {
        if pos >= n {
            spans.push((span_start, n));
            warnings += 1; // no EOI
            break;
        }
        if b[pos] != 0xFF {
            pos += 1;
            continue;
        }
        if pos + 1 >= n {
            spans.push((span_start, n));
            warnings += 1; // dangling 0xFF at stream end
            break;
        }
        match b[pos + 1] {
            0x00 => pos += 2, // stuffed data byte
            0xFF => pos += 1, // fill byte, stays in payload
            0xD0..=0xD7 => {
                spans.push((span_start, pos));
                restarts = true;
                pos += 2;
                span_start = pos;
            }
            0xD9 => {
                spans.push((span_start, pos));
                break;
            }
            other => {
                return Err(Error::ScanCorrupt(format!(
                    "unexpected marker 0xFF{other:02X} at offset {pos}"
                )));
            }
        }
    }

    Ok((spans, restarts, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal JPEG: SOI, one APP0-ish segment, SOS header, entropy, EOI.
    fn jpeg_with_scan(entropy: &[u8]) -> ByteStream {
        let mut b = vec![0xFF, 0xD8];
        b.extend_from_slice(&[0xFF, 0xE0, 0x00, 0x04, 0xAA, 0xBB]); // APP0, len 4
        b.extend_from_slice(&[0xFF, 0xDA, 0x00, 0x08, 1, 1, 0, 0, 0x3F, 0]); // SOS, len 8
        b.extend_from_slice(entropy);
        b.extend_from_slice(&[0xFF, 0xD9]);
        ByteStream { bytes: b, source_path: "<test>".into(), format: FormatKind::Jpeg }
    }

    #[test]
    fn stuffed_ff00_stays_in_payload() {
        let s = jpeg_with_scan(&[0xAB, 0xFF, 0x00, 0xCD]);
        let seq = jpeg_scan_segments(&s).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.blocks[0].bytes, vec![0xAB, 0xFF, 0x00, 0xCD]);
        assert_eq!(seq.total_duration_s, 0.0);
    }

    #[test]
    fn one_restart_marker_gives_two_blocks() {
        let s = jpeg_with_scan(&[0x01, 0x02, 0xFF, 0xD0, 0x03, 0x04, 0x05]);
        let seq = jpeg_scan_segments(&s).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.blocks[0].bytes, vec![0x01, 0x02]);
        assert_eq!(seq.blocks[1].bytes, vec![0x03, 0x04, 0x05]);
    }

    #[test]
    fn no_restarts_chunks_the_scan() {
        let entropy: Vec<u8> = (0..300u32).map(|i| (i % 251) as u8).collect();
        let s = jpeg_with_scan(&entropy);
        let seq = jpeg_scan_segments_with(&s, 144).unwrap();
        let lens: Vec<usize> = seq.blocks.iter().map(|b| b.bytes.len()).collect();
        assert_eq!(lens, vec![144, 144, 12]);
        // Chunks are contiguous in the file.
        assert_eq!(seq.blocks[1].offset, seq.blocks[0].offset + 144);
    }

    #[test]
    fn missing_sos_is_an_error() {
        let s = ByteStream {
            bytes: vec![0xFF, 0xD8, 0xFF, 0xD9],
            source_path: "<test>".into(),
            format: FormatKind::Jpeg,
        };
        assert!(matches!(jpeg_scan_segments(&s), Err(Error::JpegParse(_))));
    }

    #[test]
    fn unexpected_marker_inside_scan_is_corrupt() {
        let s = jpeg_with_scan(&[0x01, 0xFF, 0xC4, 0x02]);
        assert!(matches!(jpeg_scan_segments(&s), Err(Error::ScanCorrupt(_))));
    }

    #[test]
    fn truncated_scan_emits_block_with_warning() {
        let mut s = jpeg_with_scan(&[0x01, 0x02, 0x03]);
        s.bytes.truncate(s.bytes.len() - 2); // drop the EOI
        let seq = jpeg_scan_segments(&s).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.warnings, 1);
    }

    #[test]
    fn blocks_never_contain_unstuffed_marker_bytes() {
        let entropy = [0x10, 0xFF, 0x00, 0xFF, 0xFF, 0x00, 0x22, 0xFF, 0xD1, 0x33];
        let s = jpeg_with_scan(&entropy);
        let seq = jpeg_scan_segments(&s).unwrap();
        for block in &seq.blocks {
            for w in block.bytes.windows(2) {
                assert!(!(w[0] == 0xFF && (0x01..=0xCF).contains(&w[1])), "bad pair {w:02X?}");
            }
        }
    }

    #[test]
    fn adjacent_restarts_skip_empty_span() {
        let s = jpeg_with_scan(&[0x01, 0xFF, 0xD0, 0xFF, 0xD1, 0x02]);
        let seq = jpeg_scan_segments(&s).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.warnings, 1);
    }
}
