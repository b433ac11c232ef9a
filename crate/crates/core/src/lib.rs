//! # tempest-core
//!
//! Recovers semantically self-contained blocks from compressed file formats
//! (MP3 frames, Ogg/Opus packets, JPEG scan segments), tokenizes them at the
//! byte level, and trains/evaluates a small transformer that classifies
//! directly from the compressed stream — no audio or pixel decoding anywhere.
//!
//! Pipeline: [`stream`] loads and strips files, [`parse`] partitions them
//! into blocks, [`token`] turns blocks into fixed-shape token rows, [`model`]
//! embeds each block, regularizes the embedding with a byte-reconstruction
//! decoder, and classifies the block sequence through an encoder with a
//! learnable classification token. [`augment`] provides compressed-domain
//! CutMix and multi-bit-rate transcoding; [`harness`] holds manifests, the
//! training loop, evaluation, multi-rate inference, and the analytic
//! compute/memory report.

pub mod augment;
pub mod error;
pub mod harness;
pub mod model;
pub mod parse;
pub mod stream;
pub mod synthetic;
pub mod token;

pub use error::{Error, Result};
pub use stream::{detect_format, load_stream, open_stream, strip_metadata, ByteStream, FormatKind};
