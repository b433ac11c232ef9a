//! Analytic compute estimate for one forward pass.
//!
//! Convention: 2 floating-point operations per multiply-accumulate, matmuls
//! only (projections, attention scores and values, feed-forwards, the mixer,
//! the decoder, and the heads). Norms, softmax, and activations are excluded.

use crate::model::params::ModelConfig;

/// FLOPs of one encoder layer over a sequence of length `s`.
fn encoder_layer_flops(cfg: &ModelConfig, s: usize) -> f64 {
    let n = cfg.embed_dim as f64;
    let ff = cfg.ff_dim as f64;
    let s = s as f64;
    // Q/K/V/O projections, attention scores, attention-times-values, FFN.
    8.0 * s * n * n + 4.0 * s * s * n + 4.0 * s * n * ff
}

/// Total matmul FLOPs for a full forward pass (block embedder, mixer,
/// reconstruction decoder, classification encoder, heads) over `num_blocks`
/// blocks.
pub fn flops_estimate(cfg: &ModelConfig, num_blocks: usize) -> f64 {
    let n = cfg.embed_dim as f64;
    let ff = cfg.ff_dim as f64;
    let l = cfg.l_max as f64;
    let lp = cfg.l_prime as f64;
    let blocks = num_blocks as f64;

    // Block-embedding stack over every block.
    let embed = cfg.embed_layers as f64 * encoder_layer_flops(cfg, cfg.l_max) * blocks;

    // Mixer: position mix (L_max -> L_prime per channel) + channel MLP.
    let mixer = (2.0 * lp * l * n + 4.0 * lp * n * ff) * blocks;

    // Decoder: queries project at L_max, keys/values at L_prime.
    let decoder_layer = 2.0 * l * n * n        // Q projection
        + 2.0 * 2.0 * lp * n * n               // K, V projections
        + 2.0 * l * lp * n                     // scores
        + 2.0 * l * lp * n                     // attention * values
        + 2.0 * l * n * n                      // output projection
        + 4.0 * l * n * ff; // FFN
    let recon_head = 2.0 * l * n * cfg.vocab as f64;
    let decoder = if cfg.decoder_layers > 0 {
        (cfg.decoder_layers as f64 * decoder_layer + recon_head) * blocks
    } else {
        0.0
    };

    // Classification stack over the flattened block tokens plus CLS.
    let class_seq = cfg.class_seq_len(num_blocks);
    let classify = cfg.class_layers as f64 * encoder_layer_flops(cfg, class_seq);
    let class_head = 2.0 * n * cfg.num_classes as f64;

    embed + mixer + decoder + classify + class_head
}

/// Attention-matrix entries per classification-encoder layer for
/// `num_blocks` blocks: the squared sequence length including CLS.
pub fn attention_entries(cfg: &ModelConfig, num_blocks: usize) -> usize {
    let s = cfg.class_seq_len(num_blocks);
    s * s
}
