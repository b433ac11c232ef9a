//! MP3 (MPEG-1/2/2.5 Layer III) frame scanning.
//!
//! Frames are located by their 11-bit sync word and validated by decoding the
//! 4-byte header. A candidate is accepted only when the position after its
//! header-derived length starts another valid header or ends the stream;
//! payload bytes can contain spurious sync patterns, and single-header
//! validation yields false frames.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parse::{BlockKind, BlockSequence, CompressedBlock};
use crate::stream::{ByteStream, FormatKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpegVersion {
    Mpeg1,
    Mpeg2,
    Mpeg2_5,
}

/// Layer III bit-rate tables in bits per second, indexed by the header's
/// 4-bit bitrate field. Index 0 ("free") and 15 (reserved) are invalid here.
const BITRATES_V1_L3: [u32; 16] = [
    0, 32_000, 40_000, 48_000, 56_000, 64_000, 80_000, 96_000, 112_000, 128_000, 160_000, 192_000,
    224_000, 256_000, 320_000, 0,
];
const BITRATES_V2_L3: [u32; 16] = [
    0, 8_000, 16_000, 24_000, 32_000, 40_000, 48_000, 56_000, 64_000, 80_000, 96_000, 112_000,
    128_000, 144_000, 160_000, 0,
];

const SAMPLERATES_V1: [u32; 3] = [44_100, 48_000, 32_000];
const SAMPLERATES_V2: [u32; 3] = [22_050, 24_000, 16_000];
const SAMPLERATES_V2_5: [u32; 3] = [11_025, 12_000, 8_000];

/// Decoded fields of one Layer III frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mp3FrameHeader {
    pub version: MpegVersion,
    /// Layer number in human convention; only Layer III (3) is accepted.
    pub layer: u8,
    pub bitrate_bps: u32,
    pub samplerate_hz: u32,
    pub padding: u8,
    pub samples_per_frame: u32,
}

impl Mp3FrameHeader {
    /// Decode a 4-byte header. Returns `None` for anything that is not a
    /// valid Layer III header with table-legal bitrate and sample rate.
    pub fn parse(b: &[u8]) -> Option<Self> {
        if b.len() < 4 || b[0] != 0xFF || b[1] & 0xE0 != 0xE0 {
            return None;
        }
        let version = match (b[1] >> 3) & 0x3 {
            0b00 => MpegVersion::Mpeg2_5,
            0b10 => MpegVersion::Mpeg2,
            0b11 => MpegVersion::Mpeg1,
            _ => return None, // reserved
        };
        // Layer III is 0b01 in the header field.
        if (b[1] >> 1) & 0x3 != 0b01 {
            return None;
        }
        let bitrate_idx = (b[2] >> 4) as usize;
        let samplerate_idx = ((b[2] >> 2) & 0x3) as usize;
        if samplerate_idx == 3 {
            return None;
        }
        let bitrate_bps = match version {
            MpegVersion::Mpeg1 => BITRATES_V1_L3[bitrate_idx],
            _ => BITRATES_V2_L3[bitrate_idx],
        };
        if bitrate_bps == 0 {
            return None; // free or reserved
        }
        let samplerate_hz = match version {
            MpegVersion::Mpeg1 => SAMPLERATES_V1[samplerate_idx],
            MpegVersion::Mpeg2 => SAMPLERATES_V2[samplerate_idx],
            MpegVersion::Mpeg2_5 => SAMPLERATES_V2_5[samplerate_idx],
        };
        let samples_per_frame = match version {
            MpegVersion::Mpeg1 => 1152,
            _ => 576,
        };
        Some(Mp3FrameHeader {
            version,
            layer: 3,
            bitrate_bps,
            samplerate_hz,
            padding: (b[2] >> 1) & 0x1,
            samples_per_frame,
        })
    }

    /// Total frame length in bytes, header included:
    /// `floor(samples_per_frame/8 * bitrate / samplerate) + padding`.
    pub fn frame_len(&self) -> usize {
        let slots = (self.samples_per_frame as u64 / 8) * self.bitrate_bps as u64
            / self.samplerate_hz as u64;
        slots as usize + self.padding as usize
    }

    /// Seconds of audio covered by this frame.
    pub fn duration_s(&self) -> f64 {
        self.samples_per_frame as f64 / self.samplerate_hz as f64
    }
}

/// Scan a stripped MP3 stream into its frame sequence.
pub fn mp3_scan_frames(s: &ByteStream) -> Result<BlockSequence> {
    let b = &s.bytes;
    let n = b.len();
    let mut blocks = Vec::new();
    let mut warnings = 0usize;
    let mut total_duration = 0.0f64;
    let mut i = 0usize;
    // True exactly when `i` is the byte after an accepted frame, so a
    // truncated candidate there is a genuine truncated final frame rather
    // than a false sync inside unrelated bytes.
    let mut at_frame_boundary = false;

    while i + 4 <= n {
        let Some(header) = Mp3FrameHeader::parse(&b[i..]) else {
            i += 1;
            at_frame_boundary = false;
            continue;
        };
        let len = header.frame_len();
        if len <= 4 {
            i += 1;
            at_frame_boundary = false;
            continue;
        }
        if i + len > n {
            if at_frame_boundary {
                warnings += 1; // truncated final frame: drop it
                break;
            }
            i += 1;
            continue;
        }
        let next_ok = i + len == n
            || (i + len + 4 <= n && Mp3FrameHeader::parse(&b[i + len..]).is_some());
        if !next_ok {
            i += 1;
            at_frame_boundary = false;
            continue;
        }
        total_duration += header.duration_s();
        blocks.push(CompressedBlock::contiguous(
            i,
            b[i..i + len].to_vec(),
            header.duration_s(),
            BlockKind::Mp3Frame,
        ));
        i += len;
        at_frame_boundary = true;
    }

    if blocks.is_empty() {
        return Err(Error::NoFrames);
    }
    Ok(BlockSequence {
        blocks,
        total_duration_s: total_duration,
        source_format: FormatKind::Mp3,
        warnings,
    })
}

/// Emit a deterministic synthetic MP3 stream of `frame_count` identical-size
/// frames: valid Layer III headers followed by seeded pseudorandom payload.
///
/// Payload bytes are sanitized so no spurious sync word survives inside a
/// frame, which makes `mp3_scan_frames` on the output recover exactly
/// `frame_count` blocks.
pub fn synth_mp3_stream(
    frame_count: usize,
    bitrate_bps: u32,
    samplerate_hz: u32,
    payload_seed: u64,
) -> Result<ByteStream> {
    if frame_count == 0 {
        return Err(Error::Config("frame_count must be at least 1".into()));
    }
    let (version, sr_idx) = if let Some(i) = SAMPLERATES_V1.iter().position(|&r| r == samplerate_hz)
    {
        (MpegVersion::Mpeg1, i)
    } else if let Some(i) = SAMPLERATES_V2.iter().position(|&r| r == samplerate_hz) {
        (MpegVersion::Mpeg2, i)
    } else if let Some(i) = SAMPLERATES_V2_5.iter().position(|&r| r == samplerate_hz) {
        (MpegVersion::Mpeg2_5, i)
    } else {
        return Err(Error::Config(format!("{samplerate_hz} Hz is not an MPEG sample rate")));
    };
    let table = match version {
        MpegVersion::Mpeg1 => &BITRATES_V1_L3,
        _ => &BITRATES_V2_L3,
    };
    let Some(br_idx) = table.iter().position(|&r| r == bitrate_bps && r != 0) else {
        return Err(Error::Config(format!(
            "{bitrate_bps} bps is not a Layer III bitrate for this sample rate"
        )));
    };

    let version_bits: u8 = match version {
        MpegVersion::Mpeg1 => 0b11,
        MpegVersion::Mpeg2 => 0b10,
        MpegVersion::Mpeg2_5 => 0b00,
    };
    // Sync + version + layer III + no CRC; bitrate/samplerate/padding=0;
    // mono, no mode extension, original, no emphasis.
    let header = [
        0xFFu8,
        0xE0 | (version_bits << 3) | (0b01 << 1) | 1,
        ((br_idx as u8) << 4) | ((sr_idx as u8) << 2),
        0b1100_0100,
    ];
    let frame = Mp3FrameHeader::parse(&header).expect("generated header must parse");
    let frame_len = frame.frame_len();

    let mut rng = ChaCha8Rng::seed_from_u64(payload_seed);
    let mut out = Vec::with_capacity(frame_count * frame_len);
    for _ in 0..frame_count {
        let mut payload = vec![0u8; frame_len - 4];
        rng.fill_bytes(&mut payload);
        // Kill any sync pattern inside the payload.
        for j in 0..payload.len().saturating_sub(1) {
            if payload[j] == 0xFF && payload[j + 1] & 0xE0 == 0xE0 {
                payload[j + 1] &= 0x1F;
            }
        }
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
    }

    Ok(ByteStream { bytes: out, source_path: "<synth-mp3>".into(), format: FormatKind::Mp3 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(bitrate_idx: u8, sr_idx: u8, padding: u8) -> [u8; 4] {
        [0xFF, 0xFB, (bitrate_idx << 4) | (sr_idx << 2) | (padding << 1), 0xC4]
    }

    #[test]
    fn frame_length_128kbps_44100() {
        // 128 kbps is index 9 in the MPEG-1 Layer III table.
        let h = Mp3FrameHeader::parse(&header_bytes(9, 0, 0)).unwrap();
        assert_eq!(h.bitrate_bps, 128_000);
        assert_eq!(h.samplerate_hz, 44_100);
        assert_eq!(h.frame_len(), 417);

        let padded = Mp3FrameHeader::parse(&header_bytes(9, 0, 1)).unwrap();
        assert_eq!(padded.frame_len(), 418);
    }

    #[test]
    fn header_rejects_reserved_fields() {
        assert!(Mp3FrameHeader::parse(&[0xFF, 0xFB, 0xF0, 0xC4]).is_none()); // bitrate 15
        assert!(Mp3FrameHeader::parse(&[0xFF, 0xFB, 0x9C, 0xC4]).is_none()); // samplerate 3
        assert!(Mp3FrameHeader::parse(&[0xFF, 0xFB, 0x00, 0xC4]).is_none()); // free bitrate
        assert!(Mp3FrameHeader::parse(&[0xFF, 0xFD, 0x90, 0xC4]).is_none()); // layer II
        assert!(Mp3FrameHeader::parse(&[0xFF, 0xEB, 0x90, 0xC4]).is_none()); // reserved version
    }

    #[test]
    fn synth_single_frame_is_417_bytes() {
        let s = synth_mp3_stream(1, 128_000, 44_100, 7).unwrap();
        assert_eq!(s.bytes.len(), 417);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_mp3_stream(4, 64_000, 44_100, 99).unwrap();
        let b = synth_mp3_stream(4, 64_000, 44_100, 99).unwrap();
        assert_eq!(a.bytes, b.bytes);
        let c = synth_mp3_stream(4, 64_000, 44_100, 100).unwrap();
        assert_ne!(a.bytes, c.bytes);
    }

    #[test]
    fn synth_rejects_illegal_parameters() {
        assert!(matches!(synth_mp3_stream(1, 20_000, 44_100, 0), Err(Error::Config(_))));
        assert!(matches!(synth_mp3_stream(1, 128_000, 44_000, 0), Err(Error::Config(_))));
        assert!(matches!(synth_mp3_stream(0, 128_000, 44_100, 0), Err(Error::Config(_))));
    }

    #[test]
    fn scan_recovers_synthetic_frames() {
        for k in [1usize, 2, 10] {
            let s = synth_mp3_stream(k, 128_000, 44_100, 7).unwrap();
            let seq = mp3_scan_frames(&s).unwrap();
            assert_eq!(seq.len(), k, "frame count for k={k}");
        }
        let s = synth_mp3_stream(3, 128_000, 44_100, 3).unwrap();
        let seq = mp3_scan_frames(&s).unwrap();
        let offsets: Vec<usize> = seq.blocks.iter().map(|b| b.offset).collect();
        assert_eq!(offsets, vec![0, 417, 834]);
        assert!((seq.total_duration_s - 3.0 * 1152.0 / 44_100.0).abs() < 1e-12);
    }

    #[test]
    fn scan_mpeg2_uses_576_samples() {
        let s = synth_mp3_stream(2, 32_000, 22_050, 1).unwrap();
        let seq = mp3_scan_frames(&s).unwrap();
        // floor(576/8 * 32000 / 22050) = floor(104.49) = 104
        assert_eq!(seq.blocks[0].bytes.len(), 104);
        assert!((seq.blocks[0].duration_s - 576.0 / 22_050.0).abs() < 1e-12);
    }

    #[test]
    fn scan_errors_without_frames() {
        let s = ByteStream {
            bytes: vec![0x00; 64],
            source_path: "<test>".into(),
            format: FormatKind::Mp3,
        };
        assert!(matches!(mp3_scan_frames(&s), Err(Error::NoFrames)));
    }

    #[test]
    fn truncated_final_frame_is_dropped_with_warning() {
        let full = synth_mp3_stream(3, 128_000, 44_100, 5).unwrap();
        let mut cut = full.clone();
        cut.bytes.truncate(417 * 2 + 100);
        let seq = mp3_scan_frames(&cut).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.warnings, 1);
    }

    #[test]
    fn garbage_prefix_is_skipped() {
        let clean = synth_mp3_stream(2, 64_000, 44_100, 11).unwrap();
        let mut bytes = vec![0x12u8, 0xFF, 0xE1, 0x55]; // fake sync, invalid header tail
        bytes.extend_from_slice(&clean.bytes);
        let s = ByteStream { bytes, source_path: "<test>".into(), format: FormatKind::Mp3 };
        let seq = mp3_scan_frames(&s).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.blocks[0].offset, 4);
    }
}
