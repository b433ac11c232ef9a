//! Byte-to-token conversion and the sequence-efficiency metrics (tokens per
//! second, token-to-byte ratio).
//!
//! Tokens are raw byte values 0..=255 plus the pad value 256; there is no
//! learned vocabulary. Every block is brought to a fixed length `l_max` by
//! padding (or truncation for oversize blocks).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::parse::{BlockSequence, CompressedBlock};

/// Pad token: one past the last byte value.
pub const PAD_TOKEN: u16 = 256;

/// Vocabulary size: 256 byte values plus the pad token.
pub const VOCAB_SIZE: usize = 257;

/// One block as a fixed-length integer sequence over `{0..=256}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedBlock {
    pub tokens: Vec<u16>,
    pub valid_len: usize,
}

impl TokenizedBlock {
    /// Recover the original bytes (valid prefix only).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.tokens[..self.valid_len].iter().map(|&t| t as u8).collect()
    }
}

/// Token rows for one stream, with an optional (possibly soft) label.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub rows: Vec<TokenizedBlock>,
    /// Class distribution; non-negative, sums to 1 (within 1e-6) when present.
    pub label: Option<Vec<f64>>,
    pub duration_s: f64,
    /// Rows whose source block was longer than `l_max` and got truncated.
    pub truncated_rows: usize,
}

impl TokenMatrix {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn l_max(&self) -> usize {
        self.rows.first().map_or(0, |r| r.tokens.len())
    }

    /// Attach a one-hot label.
    pub fn with_label(mut self, class: usize, num_classes: usize) -> Self {
        let mut label = vec![0.0; num_classes];
        label[class] = 1.0;
        self.label = Some(label);
        self
    }

    /// Verify a label distribution: non-negative, sums to 1 within 1e-6.
    pub fn check_label(&self) -> Result<()> {
        if let Some(label) = &self.label {
            if label.iter().any(|&p| p < 0.0) {
                return Err(Error::Label("negative class weight".into()));
            }
            let sum: f64 = label.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Label(format!("class weights sum to {sum}, expected 1")));
            }
        }
        Ok(())
    }
}

/// Map one block to a fixed-length token row: bytes as integers, pad suffix,
/// truncation for oversize blocks.
pub fn tokenize_block(block: &CompressedBlock, l_max: usize) -> TokenizedBlock {
    let valid_len = block.bytes.len().min(l_max);
    let mut tokens = Vec::with_capacity(l_max);
    tokens.extend(block.bytes[..valid_len].iter().map(|&b| b as u16));
    tokens.resize(l_max, PAD_TOKEN);
    TokenizedBlock { tokens, valid_len }
}

/// Tokenize a block sequence: one row per block, up to `max_blocks` (excess
/// dropped from the end).
pub fn tokenize_stream(
    seq: &BlockSequence,
    l_max: usize,
    max_blocks: usize,
) -> Result<TokenMatrix> {
    if seq.blocks.is_empty() {
        return Err(Error::EmptyInput);
    }
    let take = seq.blocks.len().min(max_blocks);
    let mut truncated = 0usize;
    let rows: Vec<TokenizedBlock> = seq.blocks[..take]
        .iter()
        .map(|b| {
            if b.bytes.len() > l_max {
                truncated += 1;
            }
            tokenize_block(b, l_max)
        })
        .collect();
    Ok(TokenMatrix {
        rows,
        label: None,
        duration_s: seq.total_duration_s,
        truncated_rows: truncated,
    })
}

/// Tokens per second of media: `l_prime * blocks / duration`.
pub fn compute_tps(seq: &BlockSequence, l_prime: usize) -> Result<f64> {
    if seq.total_duration_s <= 0.0 {
        return Err(Error::NotApplicable(
            "tokens-per-second is undefined for zero-duration media".into(),
        ));
    }
    Ok(l_prime as f64 * seq.blocks.len() as f64 / seq.total_duration_s)
}

/// Token-to-byte ratio: embedded tokens per compressed byte, `l_prime / l_avg`.
pub fn compute_tbr(l_prime: usize, l_avg: f64) -> f64 {
    debug_assert!(l_avg > 0.0);
    l_prime as f64 / l_avg
}

// ---------------------------------------------------------------------------
// Flat binary layout for token matrices
// ---------------------------------------------------------------------------
//
//   magic   4 bytes  "TMTK"
//   l_max        u32 LE
//   rows         u32 LE
//   num_classes  u32 LE   (0 = unlabeled)
//   tokens       rows * l_max u16 LE, row-major
//   label        num_classes f32 LE  (present iff num_classes > 0)

const TOKEN_MAGIC: &[u8; 4] = b"TMTK";

/// Serialize a token matrix to the flat binary layout.
pub fn write_token_matrix(m: &TokenMatrix, mut w: impl Write) -> Result<()> {
    let io_err = |e| Error::io("<token-matrix>", e);
    let l_max = m.l_max() as u32;
    let num_classes = m.label.as_ref().map_or(0, |l| l.len()) as u32;
    w.write_all(TOKEN_MAGIC).map_err(io_err)?;
    w.write_all(&l_max.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.rows.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&num_classes.to_le_bytes()).map_err(io_err)?;
    for row in &m.rows {
        for &t in &row.tokens {
            w.write_all(&t.to_le_bytes()).map_err(io_err)?;
        }
    }
    if let Some(label) = &m.label {
        for &p in label {
            w.write_all(&(p as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

/// Deserialize a token matrix from the flat binary layout.
pub fn read_token_matrix(mut r: impl Read) -> Result<TokenMatrix> {
    let io_err = |e| Error::io("<token-matrix>", e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != TOKEN_MAGIC {
        return Err(Error::Config("not a token-matrix file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|e| Error::io("<token-matrix>", e))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let l_max = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let num_classes = read_u32(&mut r)? as usize;

    let mut tok_bytes = vec![0u8; rows * l_max * 2];
    r.read_exact(&mut tok_bytes).map_err(io_err)?;
    let mut out_rows = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut tokens = Vec::with_capacity(l_max);
        for j in 0..l_max {
            let off = (i * l_max + j) * 2;
            tokens.push(u16::from_le_bytes([tok_bytes[off], tok_bytes[off + 1]]));
        }
        let valid_len = tokens.iter().position(|&t| t == PAD_TOKEN).unwrap_or(l_max);
        out_rows.push(TokenizedBlock { tokens, valid_len });
    }

    let label = if num_classes > 0 {
        let mut buf = vec![0u8; num_classes * 4];
        r.read_exact(&mut buf).map_err(io_err)?;
        Some(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        )
    } else {
        None
    };

    Ok(TokenMatrix { rows: out_rows, label, duration_s: 0.0, truncated_rows: 0 })
}

/// Write a token matrix to a file.
pub fn save_token_matrix(m: &TokenMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_token_matrix(m, std::io::BufWriter::new(f))
}

/// Read a token matrix from a file.
pub fn load_token_matrix(path: impl AsRef<Path>) -> Result<TokenMatrix> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_token_matrix(std::io::BufReader::new(f))
}
