//! Ogg-encapsulated Opus packet extraction.
//!
//! Pages are walked strictly (magic, version, CRC); packets are reassembled
//! from lacing values, with 255 continuing a packet into the next segment or
//! page. `OpusHead`/`OpusTags` header packets are excluded from the block
//! sequence. Packet duration comes from the TOC byte alone (RFC 6716 frame
//! sizes times the frame-count code); no audio is decoded.

use crate::error::{Error, Result};
use crate::parse::{BlockKind, BlockSequence, ByteSpan, CompressedBlock};
use crate::stream::{ByteStream, FormatKind};

const PAGE_HEADER_LEN: usize = 27;
const CONTINUED_FLAG: u8 = 0x01;
const EOS_FLAG: u8 = 0x04;

struct PageRef<'a> {
    header_type: u8,
    serial: u32,
    sequence: u32,
    lacing: &'a [u8],
    payload_offset: usize,
    total_len: usize,
}

fn parse_page<'a>(bytes: &'a [u8], pos: usize) -> Result<Option<PageRef<'a>>> {
    let b = &bytes[pos..];
    if b.len() < PAGE_HEADER_LEN {
        return Ok(None); // truncated header at stream tail
    }
    if &b[0..4] != b"OggS" {
        return Err(Error::OggParse(format!("bad page magic at offset {pos}")));
    }
    if b[4] != 0 {
        return Err(Error::OggParse(format!("unsupported ogg version {} at {pos}", b[4])));
    }
    let nsegs = b[26] as usize;
    if b.len() < PAGE_HEADER_LEN + nsegs {
        return Ok(None); // truncated lacing table
    }
    let lacing = &b[PAGE_HEADER_LEN..PAGE_HEADER_LEN + nsegs];
    let payload_len: usize = lacing.iter().map(|&v| v as usize).sum();
    let total_len = PAGE_HEADER_LEN + nsegs + payload_len;
    if b.len() < total_len {
        return Ok(None); // truncated payload
    }

    let stored_crc = u32::from_le_bytes([b[22], b[23], b[24], b[25]]);
    if ogg_page_crc(&b[..total_len]) != stored_crc {
        return Err(Error::OggParse(format!("crc mismatch on page at offset {pos}")));
    }

    Ok(Some(PageRef {
        header_type: b[5],
        serial: u32::from_le_bytes([b[14], b[15], b[16], b[17]]),
        sequence: u32::from_le_bytes([b[18], b[19], b[20], b[21]]),
        lacing,
        payload_offset: pos + PAGE_HEADER_LEN + nsegs,
        total_len,
    }))
}

/// CRC-32 with polynomial 0x04C11DB7, no reflection, zero init and xor, as
/// specified for Ogg pages. The CRC field itself is taken as zero.
pub(crate) fn ogg_page_crc(page: &[u8]) -> u32 {
    let mut crc = 0u32;
    for (i, &byte) in page.iter().enumerate() {
        let byte = if (22..26).contains(&i) { 0 } else { byte };
        crc ^= (byte as u32) << 24;
        for _ in 0..8 {
            crc = if crc & 0x8000_0000 != 0 { (crc << 1) ^ 0x04C1_1DB7 } else { crc << 1 };
        }
    }
    crc
}

#[derive(Default)]
struct PacketAccum {
    bytes: Vec<u8>,
    spans: Vec<ByteSpan>,
}

impl PacketAccum {
    fn push_segment(&mut self, data: &[u8], file_offset: usize) {
        if data.is_empty() {
            return;
        }
        match self.spans.last_mut() {
            Some(last) if last.end() == file_offset => last.len += data.len(),
            _ => self.spans.push(ByteSpan { offset: file_offset, len: data.len() }),
        }
        self.bytes.extend_from_slice(data);
    }

    fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    fn take(&mut self) -> (Vec<u8>, Vec<ByteSpan>) {
        (std::mem::take(&mut self.bytes), std::mem::take(&mut self.spans))
    }
}

/// Extract audio packets from an Ogg/Opus stream as compressed blocks.
pub fn opus_extract_packets(s: &ByteStream) -> Result<BlockSequence> {
    let bytes = &s.bytes;
    let mut blocks = Vec::new();
    let mut warnings = 0usize;
    let mut total_duration = 0.0f64;

    let mut pos = 0usize;
    let mut stream_serial: Option<u32> = None;
    let mut expected_seq: Option<u32> = None;
    let mut accum = PacketAccum::default();
    // Set after a dropped packet so continuation segments of it are consumed
    // without being attributed to the next packet.
    let mut discard_continuation = false;

    while pos < bytes.len() {
        let page = match parse_page(bytes, pos)? {
            Some(p) => p,
            None => {
                // Truncated trailing page: whatever packet was in flight
                // spans a page we do not have.
                if !accum.is_empty() {
                    warnings += 1;
                    accum.take();
                }
                warnings += 1;
                break;
            }
        };

        let serial = *stream_serial.get_or_insert(page.serial);
        if page.serial != serial {
            // Multiplexed secondary stream: structural, not ours.
            pos += page.total_len;
            continue;
        }

        if let Some(expected) = expected_seq {
            if page.sequence != expected {
                // Missing page(s): a packet in flight is truncated.
                if !accum.is_empty() {
                    warnings += 1;
                    accum.take();
                }
                discard_continuation = page.header_type & CONTINUED_FLAG != 0;
            }
        }
        expected_seq = Some(page.sequence.wrapping_add(1));

        if page.header_type & CONTINUED_FLAG == 0 {
            if !accum.is_empty() {
                // Previous page promised continuation that never came.
                warnings += 1;
                accum.take();
            }
            discard_continuation = false;
        }

        let mut seg_offset = page.payload_offset;
        for &lace in page.lacing {
            let seg = &bytes[seg_offset..seg_offset + lace as usize];
            if !discard_continuation {
                accum.push_segment(seg, seg_offset);
            }
            seg_offset += lace as usize;
            if lace < 255 {
                if discard_continuation {
                    discard_continuation = false;
                    continue;
                }
                let (pkt, spans) = accum.take();
                match finish_packet(pkt, spans) {
                    PacketOutcome::Audio(block) => {
                        total_duration += block.duration_s;
                        blocks.push(block);
                    }
                    PacketOutcome::Header => {}
                    PacketOutcome::Malformed => warnings += 1,
                }
            }
        }

        pos += page.total_len;
        if page.header_type & EOS_FLAG != 0 {
            break; // bytes after the end-of-stream page are not ours
        }
    }

    if !accum.is_empty() {
        warnings += 1; // packet continued past the final page
    }

    Ok(BlockSequence {
        blocks,
        total_duration_s: total_duration,
        source_format: FormatKind::OpusOgg,
        warnings,
    })
}

enum PacketOutcome {
    Audio(CompressedBlock),
    Header,
    Malformed,
}

fn finish_packet(bytes: Vec<u8>, spans: Vec<ByteSpan>) -> PacketOutcome {
    if bytes.is_empty() {
        return PacketOutcome::Malformed;
    }
    if bytes.starts_with(b"OpusHead") || bytes.starts_with(b"OpusTags") {
        return PacketOutcome::Header;
    }
    let Some(duration_s) = opus_packet_duration_s(&bytes) else {
        return PacketOutcome::Malformed;
    };
    let offset = spans[0].offset;
    PacketOutcome::Audio(CompressedBlock {
        offset,
        bytes,
        duration_s,
        kind: BlockKind::OpusPacket,
        spans,
    })
}

/// Packet duration from the TOC byte: per-frame duration from the config
/// field times the frame count from the count code.
fn opus_packet_duration_s(packet: &[u8]) -> Option<f64> {
    let toc = packet[0];
    let config = toc >> 3;
    let frame_ms: f64 = match config {
        0..=11 => [10.0, 20.0, 40.0, 60.0][(config % 4) as usize],
        12..=15 => [10.0, 20.0][(config % 2) as usize],
        _ => [2.5, 5.0, 10.0, 20.0][(config % 4) as usize],
    };
    let frames = match toc & 0x3 {
        0 => 1usize,
        1 | 2 => 2,
        _ => {
            let count = (*packet.get(1)? & 0x3F) as usize;
            if count == 0 {
                return None;
            }
            count
        }
    };
    Some(frame_ms * frames as f64 / 1000.0)
}
