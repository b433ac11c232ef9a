//! Model configuration, the named parameter store, and the closed-form
//! parameter count.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::token::VOCAB_SIZE;

/// All hyperparameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width shared by every projection.
    pub embed_dim: usize,
    /// Feed-forward hidden width.
    pub ff_dim: usize,
    /// Encoder layers in the block-embedding stack.
    pub embed_layers: usize,
    /// Encoder layers in the classification stack.
    pub class_layers: usize,
    /// Reconstruction decoder layers.
    pub decoder_layers: usize,
    /// Fixed token length per block.
    pub l_max: usize,
    /// Embedded tokens produced per block.
    pub l_prime: usize,
    /// Token vocabulary: 256 byte values plus the pad token.
    pub vocab: usize,
    pub num_classes: usize,
    /// Classification-loss weight in the joint objective.
    pub lambda: f64,
    pub heads: usize,
    /// Maximum raw-token sequence length for the byte-baseline mode.
    pub byte_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 216,
            ff_dim: 864,
            embed_layers: 2,
            class_layers: 7,
            decoder_layers: 1,
            l_max: 144,
            l_prime: 1,
            vocab: VOCAB_SIZE,
            num_classes: 50,
            lambda: 1.0,
            heads: 4,
            byte_cap: 14 * 144,
        }
    }
}

impl ModelConfig {
    /// A deliberately small configuration for fast tests and oracles.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            embed_dim: 8,
            ff_dim: 16,
            embed_layers: 1,
            class_layers: 1,
            decoder_layers: 1,
            l_max: 6,
            l_prime: 1,
            vocab: VOCAB_SIZE,
            num_classes,
            lambda: 1.0,
            heads: 4,
            byte_cap: 14 * 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config("embed_dim must be positive and even".into()));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.l_prime == 0 {
            return Err(Error::Config("l_prime must be at least 1".into()));
        }
        if self.l_max == 0 {
            return Err(Error::Config("l_max must be at least 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.vocab != VOCAB_SIZE {
            return Err(Error::Config(format!(
                "vocab must be {VOCAB_SIZE} (256 byte values plus pad)"
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Tokens entering the classification encoder for `num_blocks` blocks,
    /// including the classification token.
    pub fn class_seq_len(&self, num_blocks: usize) -> usize {
        num_blocks * self.l_prime + 1
    }
}

/// All learnable tensors, stored by name in a fixed order.
///
/// Vectors are kept as `1 x n` matrices so a single 2-D representation covers
/// everything (simplifies the tape, the optimizer, and the checkpoint file).
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Initialize all tensors from a seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams { config: config.clone(), tensors: Vec::new(), index: HashMap::new() };

        let n = config.embed_dim;
        let ff = config.ff_dim;

        p.add_normal(&mut rng, "byte_embedding", config.vocab, n, 0.02);
        for l in 0..config.embed_layers {
            p.add_encoder_layer(&mut rng, &format!("embed.l{l}"), n, ff);
        }
        p.add_norm("embed.final_ln", n);

        p.add_norm("mixer.ln", n);
        p.add_xavier(&mut rng, "mixer.pos", config.l_prime, config.l_max);
        p.add_norm("mixer.mlp_ln", n);
        p.add_xavier(&mut rng, "mixer.w1", n, ff);
        p.add_zeros("mixer.b1", 1, ff);
        p.add_xavier(&mut rng, "mixer.w2", ff, n);
        p.add_zeros("mixer.b2", 1, n);

        if config.decoder_layers > 0 {
            p.add_normal(&mut rng, "decoder.queries", config.l_max, n, 0.02);
            for l in 0..config.decoder_layers {
                let pre = format!("decoder.l{l}");
                p.add_norm(&format!("{pre}.ln_q"), n);
                p.add_attention(&mut rng, &format!("{pre}.cross"), n);
                p.add_norm(&format!("{pre}.ln2"), n);
                p.add_ffn(&mut rng, &pre, n, ff);
            }
            p.add_norm("decoder.final_ln", n);
            p.add_xavier(&mut rng, "recon.w", n, config.vocab);
            p.add_zeros("recon.b", 1, config.vocab);
        }

        p.add_normal(&mut rng, "cls_token", 1, n, 0.02);
        for l in 0..config.class_layers {
            p.add_encoder_layer(&mut rng, &format!("classify.l{l}"), n, ff);
        }
        p.add_norm("classify.final_ln", n);
        p.add_xavier(&mut rng, "head.w", n, config.num_classes);
        p.add_zeros("head.b", 1, config.num_classes);

        debug_assert_eq!(p.scalar_count(), param_count(config));
        Ok(p)
    }

    fn add_tensor(&mut self, name: &str, value: Array2<f64>) {
        self.index.insert(name.to_string(), self.tensors.len());
        self.tensors.push((name.to_string(), value));
    }

    fn add_normal(&mut self, rng: &mut ChaCha8Rng, name: &str, r: usize, c: usize, std: f64) {
        let value = Array2::from_shape_fn((r, c), |_| normal_sample(rng) * std);
        self.add_tensor(name, value);
    }

    fn add_xavier(&mut self, rng: &mut ChaCha8Rng, name: &str, r: usize, c: usize) {
        let std = (2.0 / (r + c) as f64).sqrt();
        self.add_normal(rng, name, r, c, std);
    }

    fn add_zeros(&mut self, name: &str, r: usize, c: usize) {
        self.add_tensor(name, Array2::zeros((r, c)));
    }

    fn add_norm(&mut self, prefix: &str, n: usize) {
        self.add_tensor(&format!("{prefix}.gamma"), Array2::from_elem((1, n), 1.0));
        self.add_zeros(&format!("{prefix}.beta"), 1, n);
    }

    fn add_attention(&mut self, rng: &mut ChaCha8Rng, prefix: &str, n: usize) {
        for proj in ["wq", "wk", "wv", "wo"] {
            self.add_xavier(rng, &format!("{prefix}.{proj}"), n, n);
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            self.add_zeros(&format!("{prefix}.{bias}"), 1, n);
        }
    }

    fn add_ffn(&mut self, rng: &mut ChaCha8Rng, prefix: &str, n: usize, ff: usize) {
        self.add_xavier(rng, &format!("{prefix}.ff.w1"), n, ff);
        self.add_zeros(&format!("{prefix}.ff.b1"), 1, ff);
        self.add_xavier(rng, &format!("{prefix}.ff.w2"), ff, n);
        self.add_zeros(&format!("{prefix}.ff.b2"), 1, n);
    }

    fn add_encoder_layer(&mut self, rng: &mut ChaCha8Rng, prefix: &str, n: usize, ff: usize) {
        self.add_norm(&format!("{prefix}.ln1"), n);
        self.add_attention(rng, &format!("{prefix}.attn"), n);
        self.add_norm(&format!("{prefix}.ln2"), n);
        self.add_ffn(rng, prefix, n, ff);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.tensors[self.index[name]].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self.index[name];
        &mut self.tensors[i].1
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tensors(&self) -> &[(String, Array2<f64>)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// Error if any tensor holds a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerics(format!("non-finite value in tensor {name}")));
            }
        }
        Ok(())
    }
}

/// Box-Muller standard normal draw.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Learnable scalars in one encoder layer: attention projections and biases,
/// feed-forward, and two layer norms.
pub fn encoder_layer_param_count(config: &ModelConfig) -> usize {
    let n = config.embed_dim;
    let ff = config.ff_dim;
    4 * (n * n + n) + (n * ff + ff) + (ff * n + n) + 4 * n
}

/// Exact learnable scalar count from config arithmetic. Matches the
/// allocation in [`ModelParams::init`] one for one.
pub fn param_count(config: &ModelConfig) -> usize {
    let n = config.embed_dim;
    let ff = config.ff_dim;
    let layer = encoder_layer_param_count(config);

    let mut total = config.vocab * n; // byte embedding
    total += config.embed_layers * layer + 2 * n; // E_t stack + final norm
    total += 2 * n + config.l_prime * config.l_max; // mixer norm + position mix
    total += 2 * n + (n * ff + ff) + (ff * n + n); // mixer channel MLP
    if config.decoder_layers > 0 {
        total += config.l_max * n; // learned queries
        total += config.decoder_layers * (4 * (n * n + n) + (n * ff + ff) + (ff * n + n) + 4 * n);
        total += 2 * n; // decoder final norm
        total += n * config.vocab + config.vocab; // reconstruction head
    }
    total += n; // classification token
    total += config.class_layers * layer + 2 * n; // E_c stack + final norm
    total += n * config.num_classes + config.num_classes; // classifier
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_count_brackets_target() {
        let count = param_count(&ModelConfig::default());
        assert!(
            (5_200_000..=6_400_000).contains(&count),
            "default parameter count {count} outside [5.2M, 6.4M]"
        );
    }

    #[test]
    fn init_allocates_exactly_the_closed_form_count() {
        for cfg in [ModelConfig::tiny(2), ModelConfig::tiny(5), {
            let mut c = ModelConfig::tiny(3);
            c.embed_layers = 2;
            c.class_layers = 3;
            c.l_prime = 2;
            c
        }] {
            let p = ModelParams::init(&cfg, 0).unwrap();
            assert_eq!(p.scalar_count(), param_count(&cfg));
        }
    }

    #[test]
    fn zero_layers_still_counts_embedding_table() {
        let mut cfg = ModelConfig::default();
        cfg.embed_layers = 0;
        cfg.class_layers = 0;
        cfg.decoder_layers = 0;
        assert!(param_count(&cfg) >= 257 * 216);
    }

    #[test]
    fn doubling_class_layers_adds_exact_layer_cost() {
        let mut cfg = ModelConfig::default();
        cfg.class_layers = 4;
        let base = param_count(&cfg);
        cfg.class_layers = 8;
        assert_eq!(param_count(&cfg), base + 4 * encoder_layer_param_count(&cfg));
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = ModelConfig::default();
        cfg.heads = 5;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.vocab = 256;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.l_prime = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.lambda = -0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig::tiny(2);
        let a = ModelParams::init(&cfg, 7).unwrap();
        let b = ModelParams::init(&cfg, 7).unwrap();
        let c = ModelParams::init(&cfg, 8).unwrap();
        assert_eq!(a.get("byte_embedding"), b.get("byte_embedding"));
        assert_ne!(a.get("byte_embedding"), c.get("byte_embedding"));
    }
}
