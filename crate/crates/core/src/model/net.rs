//! The network: block embedder (byte embedding + intra-block encoder stack +
//! length-reducing mixer), reconstruction decoder, classification encoder
//! with a learnable classification token, the joint loss, and gradient
//! computation.
//!
//! Forward passes are recorded on a [`Tape`]; parameters are bound lazily so
//! evaluation-only paths never copy tensors they do not touch. Everything is
//! deterministic: there is no dropout and no internal RNG, so identical
//! inputs produce identical outputs in both training and inference.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams};
use crate::model::pe::sinusoidal_pe;
use crate::model::tape::{Tape, Var};
use crate::token::{TokenMatrix, TokenizedBlock};

/// How class targets are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Softmax over classes, cross-entropy against a (possibly soft) label.
    SingleLabel,
    /// Independent per-class sigmoids, binary cross-entropy.
    MultiLabel,
}

/// The `l_prime x embed_dim` representation of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEmbedding(pub Array2<f64>);

/// Loss components of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub class: f64,
}

/// Per-tensor gradients, parallel to [`ModelParams::tensors`]. Tensors the
/// loss does not reach hold zeros.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: Vec<Array2<f64>>,
}

impl GradientSet {
    pub fn by_name<'a>(&'a self, params: &ModelParams, name: &str) -> Option<&'a Array2<f64>> {
        params.tensor_index(name).map(|i| &self.grads[i])
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.grads
    }
}

/// Lazily binds parameter tensors and positional encodings onto a tape.
pub(crate) struct NetCtx<'p> {
    pub params: &'p ModelParams,
    bound: HashMap<usize, Var>,
    pe_cache: HashMap<usize, Var>,
}

impl<'p> NetCtx<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        NetCtx { params, bound: HashMap::new(), pe_cache: HashMap::new() }
    }

    fn cfg(&self) -> &ModelConfig {
        &self.params.config
    }

    fn var(&mut self, tape: &mut Tape, name: &str) -> Var {
        let idx = self
            .params
            .tensor_index(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor {name}"));
        if let Some(&v) = self.bound.get(&idx) {
            return v;
        }
        let v = tape.leaf(self.params.tensors()[idx].1.clone());
        self.bound.insert(idx, v);
        v
    }

    /// Constant sinusoidal positional encoding of the given length, created
    /// once per tape and reused.
    fn pe(&mut self, tape: &mut Tape, length: usize) -> Result<Var> {
        if let Some(&v) = self.pe_cache.get(&length) {
            return Ok(v);
        }
        let pe = sinusoidal_pe(length, self.cfg().embed_dim)?;
        let v = tape.leaf(pe);
        self.pe_cache.insert(length, v);
        Ok(v)
    }

    /// Collect gradients for every bound parameter; unbound or unreached
    /// tensors get zeros.
    fn extract_gradients(&self, tape: &Tape, grads: &crate::model::tape::Gradients) -> GradientSet {
        let out = self
            .params
            .tensors()
            .iter()
            .enumerate()
            .map(|(idx, (_, t))| match self.bound.get(&idx) {
                Some(&v) => grads.of(v, tape),
                None => Array2::zeros(t.raw_dim()),
            })
            .collect();
        GradientSet { grads: out }
    }
}

fn linear(tape: &mut Tape, ctx: &mut NetCtx, x: Var, w: &str, b: &str) -> Var {
    let wv = ctx.var(tape, w);
    let bv = ctx.var(tape, b);
    let xw = tape.matmul(x, wv);
    tape.add_row_broadcast(xw, bv)
}

fn layer_norm(tape: &mut Tape, ctx: &mut NetCtx, x: Var, prefix: &str) -> Var {
    let gamma = ctx.var(tape, &format!("{prefix}.gamma"));
    let beta = ctx.var(tape, &format!("{prefix}.beta"));
    tape.layer_norm(x, gamma, beta)
}

/// Multi-head scaled dot-product attention; `q_in == kv_in` gives
/// self-attention, otherwise cross-attention.
fn attention(tape: &mut Tape, ctx: &mut NetCtx, prefix: &str, q_in: Var, kv_in: Var) -> Var {
    let q = linear(tape, ctx, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
    let k = linear(tape, ctx, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
    let v = linear(tape, ctx, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"));

    let dh = ctx.cfg().head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(ctx.cfg().heads);
    for h in 0..ctx.cfg().heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scaled = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scaled);
        heads.push(tape.matmul(weights, vh));
    }
    let cat = tape.concat_cols(&heads);
    linear(tape, ctx, cat, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

fn ffn(tape: &mut Tape, ctx: &mut NetCtx, prefix: &str, x: Var) -> Var {
    let h = linear(tape, ctx, x, &format!("{prefix}.ff.w1"), &format!("{prefix}.ff.b1"));
    let g = tape.gelu(h);
    linear(tape, ctx, g, &format!("{prefix}.ff.w2"), &format!("{prefix}.ff.b2"))
}

/// Pre-norm transformer encoder layer.
fn encoder_layer(tape: &mut Tape, ctx: &mut NetCtx, prefix: &str, x: Var) -> Var {
    let h = layer_norm(tape, ctx, x, &format!("{prefix}.ln1"));
    let a = attention(tape, ctx, &format!("{prefix}.attn"), h, h);
    let x = tape.add(x, a);
    let h2 = layer_norm(tape, ctx, x, &format!("{prefix}.ln2"));
    let f = ffn(tape, ctx, prefix, h2);
    tape.add(x, f)
}

fn token_indices(tokens: &[u16], vocab: usize) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|&t| {
            if (t as usize) < vocab {
                Ok(t as usize)
            } else {
                Err(Error::Vocab(t as u32))
            }
        })
        .collect()
}

/// Block embedder: byte embeddings + intra-block positions, the embedding
/// encoder stack, then the mixer that reduces `l_max` positions to `l_prime`
/// (position-mixing linear map per channel, then a channel MLP with
/// residual).
pub(crate) fn embed_block_on(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    block: &TokenizedBlock,
) -> Result<Var> {
    let cfg = ctx.cfg().clone();
    if block.tokens.len() != cfg.l_max {
        return Err(Error::Shape(format!(
            "block has {} tokens, config expects l_max {}",
            block.tokens.len(),
            cfg.l_max
        )));
    }
    let indices = token_indices(&block.tokens, cfg.vocab)?;

    let table = ctx.var(tape, "byte_embedding");
    let emb = tape.gather_rows(table, &indices);
    let pe = ctx.pe(tape, cfg.l_max)?;
    let mut x = tape.add(emb, pe);

    for l in 0..cfg.embed_layers {
        x = encoder_layer(tape, ctx, &format!("embed.l{l}"), x);
    }
    x = layer_norm(tape, ctx, x, "embed.final_ln");

    // Mixer: sequence length L_max -> L_prime.
    let normed = layer_norm(tape, ctx, x, "mixer.ln");
    let pos = ctx.var(tape, "mixer.pos");
    let z = tape.matmul(pos, normed);
    let h = layer_norm(tape, ctx, z, "mixer.mlp_ln");
    let f = {
        let a = linear(tape, ctx, h, "mixer.w1", "mixer.b1");
        let g = tape.gelu(a);
        linear(tape, ctx, g, "mixer.w2", "mixer.b2")
    };
    Ok(tape.add(z, f))
}

/// Reconstruction decoder: `l_max` learned queries (plus positions)
/// cross-attend to the block embedding; a linear head maps each position to
/// vocabulary logits.
pub(crate) fn reconstruct_block_on(tape: &mut Tape, ctx: &mut NetCtx, emb: Var) -> Result<Var> {
    let cfg = ctx.cfg().clone();
    if cfg.decoder_layers == 0 {
        return Err(Error::Config("reconstruction requires at least one decoder layer".into()));
    }
    let queries = ctx.var(tape, "decoder.queries");
    let pe = ctx.pe(tape, cfg.l_max)?;
    let mut x = tape.add(queries, pe);
    for l in 0..cfg.decoder_layers {
        let prefix = format!("decoder.l{l}");
        let h = layer_norm(tape, ctx, x, &format!("{prefix}.ln_q"));
        let a = attention(tape, ctx, &format!("{prefix}.cross"), h, emb);
        x = tape.add(x, a);
        let h2 = layer_norm(tape, ctx, x, &format!("{prefix}.ln2"));
        let f = ffn(tape, ctx, &prefix, h2);
        x = tape.add(x, f);
    }
    let out = layer_norm(tape, ctx, x, "decoder.final_ln");
    Ok(linear(tape, ctx, out, "recon.w", "recon.b"))
}

/// Classification encoder: flatten block embeddings, add inter-block
/// positions, prepend the classification token, run the encoder stack, and
/// map the classification token's output to class logits.
pub(crate) fn classify_on(tape: &mut Tape, ctx: &mut NetCtx, embeddings: &[Var]) -> Result<Var> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cfg = ctx.cfg().clone();
    let seq = if embeddings.len() == 1 { embeddings[0] } else { tape.concat_rows(embeddings) };
    let seq_len = tape.value(seq).nrows();
    let pe = ctx.pe(tape, seq_len)?;
    let seq = tape.add(seq, pe);
    let cls = ctx.var(tape, "cls_token");
    let mut x = tape.concat_rows(&[cls, seq]);
    for l in 0..cfg.class_layers {
        x = encoder_layer(tape, ctx, &format!("classify.l{l}"), x);
    }
    x = layer_norm(tape, ctx, x, "classify.final_ln");
    let cls_out = tape.slice_rows(x, 0, 1);
    Ok(linear(tape, ctx, cls_out, "head.w", "head.b"))
}

/// Byte-baseline: raw byte tokens straight into the classification encoder,
/// with no block embedder, mixer, or decoder.
pub(crate) fn classify_bytes_on(tape: &mut Tape, ctx: &mut NetCtx, tokens: &[u16]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cfg = ctx.cfg().clone();
    if tokens.len() > cfg.byte_cap {
        return Err(Error::Length { len: tokens.len(), cap: cfg.byte_cap });
    }
    let indices = token_indices(tokens, cfg.vocab)?;
    let table = ctx.var(tape, "byte_embedding");
    let emb = tape.gather_rows(table, &indices);
    let pe = ctx.pe(tape, tokens.len())?;
    let seq = tape.add(emb, pe);
    let cls = ctx.var(tape, "cls_token");
    let mut x = tape.concat_rows(&[cls, seq]);
    for l in 0..cfg.class_layers {
        x = encoder_layer(tape, ctx, &format!("classify.l{l}"), x);
    }
    x = layer_norm(tape, ctx, x, "classify.final_ln");
    let cls_out = tape.slice_rows(x, 0, 1);
    Ok(linear(tape, ctx, cls_out, "head.w", "head.b"))
}

pub(crate) struct ExampleOutputs {
    pub loss: Var,
    pub recon_loss: Var,
    pub class_loss: Var,
}

/// Full joint forward for one labeled example:
/// reconstruction cross-entropy (mean over every position of every block,
/// pad positions included) plus `lambda` times the classification loss.
pub(crate) fn example_loss_on(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    example: &TokenMatrix,
    task: TaskKind,
) -> Result<ExampleOutputs> {
    example.check_label()?;
    let label = example
        .label
        .as_ref()
        .ok_or_else(|| Error::Label("training example has no label".into()))?
        .clone();
    let cfg = ctx.cfg().clone();
    if task == TaskKind::SingleLabel && label.len() != cfg.num_classes {
        return Err(Error::Config(format!(
            "label has {} classes, config expects {}",
            label.len(),
            cfg.num_classes
        )));
    }
    if example.rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut embeddings = Vec::with_capacity(example.rows.len());
    for row in &example.rows {
        embeddings.push(embed_block_on(tape, ctx, row)?);
    }

    let recon_loss = if cfg.decoder_layers > 0 {
        let mut logit_blocks = Vec::with_capacity(embeddings.len());
        let mut targets = Vec::with_capacity(embeddings.len() * cfg.l_max);
        for (row, &emb) in example.rows.iter().zip(&embeddings) {
            logit_blocks.push(reconstruct_block_on(tape, ctx, emb)?);
            targets.extend(row.tokens.iter().map(|&t| t as usize));
        }
        let all_logits =
            if logit_blocks.len() == 1 { logit_blocks[0] } else { tape.concat_rows(&logit_blocks) };
        tape.ce_mean_rows(all_logits, &targets)
    } else {
        tape.leaf(Array2::zeros((1, 1)))
    };

    let class_logits = classify_on(tape, ctx, &embeddings)?;
    let class_loss = match task {
        TaskKind::SingleLabel => tape.ce_soft(class_logits, &label),
        TaskKind::MultiLabel => tape.bce_mean(class_logits, &label),
    };

    let weighted = tape.scale(class_loss, cfg.lambda);
    let loss = tape.add(recon_loss, weighted);
    Ok(ExampleOutputs { loss, recon_loss, class_loss })
}

// ---------------------------------------------------------------------------
// Evaluation-mode entry points
// ---------------------------------------------------------------------------

/// Embed one tokenized block.
pub fn embed_block(block: &TokenizedBlock, params: &ModelParams) -> Result<BlockEmbedding> {
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let v = embed_block_on(&mut tape, &mut ctx, block)?;
    Ok(BlockEmbedding(tape.value(v).clone()))
}

/// Reconstruction logits (`l_max x vocab`) from a block embedding.
pub fn reconstruct_block(emb: &BlockEmbedding, params: &ModelParams) -> Result<Array2<f64>> {
    let cfg = &params.config;
    if emb.0.dim() != (cfg.l_prime, cfg.embed_dim) {
        return Err(Error::Shape(format!(
            "embedding shape {:?} does not match (l_prime, embed_dim) = ({}, {})",
            emb.0.dim(),
            cfg.l_prime,
            cfg.embed_dim
        )));
    }
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let e = tape.leaf(emb.0.clone());
    let v = reconstruct_block_on(&mut tape, &mut ctx, e)?;
    Ok(tape.value(v).clone())
}

/// Class logits from a sequence of block embeddings.
pub fn classify(embeddings: &[BlockEmbedding], params: &ModelParams) -> Result<Vec<f64>> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let vars: Vec<Var> = embeddings.iter().map(|e| tape.leaf(e.0.clone())).collect();
    let v = classify_on(&mut tape, &mut ctx, &vars)?;
    Ok(tape.value(v).row(0).to_vec())
}

/// Byte-baseline class logits from raw tokens.
pub fn classify_bytes(tokens: &[u16], params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let v = classify_bytes_on(&mut tape, &mut ctx, tokens)?;
    Ok(tape.value(v).row(0).to_vec())
}

/// End-to-end class probabilities for one token matrix.
pub fn predict_probs(
    example: &TokenMatrix,
    params: &ModelParams,
    task: TaskKind,
) -> Result<Vec<f64>> {
    if example.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let mut embeddings = Vec::with_capacity(example.rows.len());
    for row in &example.rows {
        embeddings.push(embed_block_on(&mut tape, &mut ctx, row)?);
    }
    let logits_var = classify_on(&mut tape, &mut ctx, &embeddings)?;
    let logits = tape.value(logits_var).row(0).to_vec();
    Ok(match task {
        TaskKind::SingleLabel => softmax(&logits),
        TaskKind::MultiLabel => logits.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
    })
}

/// Raw class logits for one token matrix.
pub fn predict_logits(example: &TokenMatrix, params: &ModelParams) -> Result<Vec<f64>> {
    if example.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let mut embeddings = Vec::with_capacity(example.rows.len());
    for row in &example.rows {
        embeddings.push(embed_block_on(&mut tape, &mut ctx, row)?);
    }
    let logits_var = classify_on(&mut tape, &mut ctx, &embeddings)?;
    Ok(tape.value(logits_var).row(0).to_vec())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Standalone joint loss from precomputed pieces:
/// `L = L_r + lambda * L_c` with `L_r` the mean per-position cross-entropy
/// over all blocks (pad positions scored against the pad class) and `L_c`
/// the classification loss.
pub fn joint_loss(
    recon_logits: &[Array2<f64>],
    original: &[TokenizedBlock],
    class_logits: &[f64],
    label: &[f64],
    lambda: f64,
    task: TaskKind,
) -> Result<LossParts> {
    if recon_logits.len() != original.len() {
        return Err(Error::Shape(format!(
            "{} reconstruction blocks vs {} token blocks",
            recon_logits.len(),
            original.len()
        )));
    }
    if label.iter().any(|&p| p < 0.0) {
        return Err(Error::Label("negative class weight".into()));
    }
    if task == TaskKind::SingleLabel {
        let sum: f64 = label.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Label(format!("class weights sum to {sum}, expected 1")));
        }
    }

    let mut tape = Tape::new();
    let recon = if recon_logits.is_empty() {
        tape.leaf(Array2::zeros((1, 1)))
    } else {
        let vars: Vec<Var> = recon_logits.iter().map(|l| tape.leaf(l.clone())).collect();
        let all = if vars.len() == 1 { vars[0] } else { tape.concat_rows(&vars) };
        let targets: Vec<usize> =
            original.iter().flat_map(|b| b.tokens.iter().map(|&t| t as usize)).collect();
        tape.ce_mean_rows(all, &targets)
    };
    let logits = tape.leaf(Array2::from_shape_vec((1, class_logits.len()), class_logits.to_vec())
        .expect("row vector"));
    let class = match task {
        TaskKind::SingleLabel => tape.ce_soft(logits, label),
        TaskKind::MultiLabel => tape.bce_mean(logits, label),
    };
    let recon_v = tape.scalar(recon);
    let class_v = tape.scalar(class);
    Ok(LossParts { total: recon_v + lambda * class_v, recon: recon_v, class: class_v })
}

/// Mean joint loss over a batch (no gradients). The finite-difference oracle
/// drives this directly.
pub fn batch_loss(params: &ModelParams, batch: &[TokenMatrix], task: TaskKind) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let mut total = 0.0;
    for example in batch {
        let out = example_loss_on(&mut tape, &mut ctx, example, task)?;
        total += tape.scalar(out.loss);
    }
    Ok(total / batch.len() as f64)
}

/// Mean joint loss over a batch plus gradients for every parameter tensor.
pub fn compute_gradients(
    params: &ModelParams,
    batch: &[TokenMatrix],
    task: TaskKind,
) -> Result<(LossParts, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(params);
    let mut losses = Vec::with_capacity(batch.len());
    let mut recon_sum = 0.0;
    let mut class_sum = 0.0;
    for example in batch {
        let out = example_loss_on(&mut tape, &mut ctx, example, task)?;
        recon_sum += tape.scalar(out.recon_loss);
        class_sum += tape.scalar(out.class_loss);
        losses.push(out.loss);
    }
    let summed = if losses.len() == 1 {
        losses[0]
    } else {
        let mut acc = losses[0];
        for &l in &losses[1..] {
            acc = tape.add(acc, l);
        }
        acc
    };
    let mean = tape.scale(summed, 1.0 / batch.len() as f64);

    let total = tape.scalar(mean);
    if !total.is_finite() {
        return Err(Error::Numerics(format!("loss is {total}")));
    }

    let grads = tape.backward(mean);
    let set = ctx.extract_gradients(&tape, &grads);
    let b = batch.len() as f64;
    Ok((LossParts { total, recon: recon_sum / b, class: class_sum / b }, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::token::{PAD_TOKEN, VOCAB_SIZE};

    fn tiny_params(classes: usize, seed: u64) -> ModelParams {
        ModelParams::init(&ModelConfig::tiny(classes), seed).unwrap()
    }

    fn row(tokens: &[u16], l_max: usize) -> TokenizedBlock {
        let mut t = tokens.to_vec();
        let valid_len = t.len();
        t.resize(l_max, PAD_TOKEN);
        TokenizedBlock { tokens: t, valid_len }
    }

    #[test]
    fn embedding_shape_is_lprime_by_n() {
        let p = tiny_params(2, 0);
        let e = embed_block(&row(&[1, 2, 3], 6), &p).unwrap();
        assert_eq!(e.0.dim(), (1, 8));

        let mut cfg = ModelConfig::tiny(2);
        cfg.l_prime = 3;
        let p3 = ModelParams::init(&cfg, 0).unwrap();
        let e3 = embed_block(&row(&[1, 2, 3], 6), &p3).unwrap();
        assert_eq!(e3.0.dim(), (3, 8));
    }

    #[test]
    fn embedding_is_deterministic() {
        let p = tiny_params(2, 1);
        let b = row(&[9, 8, 7, 6], 6);
        assert_eq!(embed_block(&b, &p).unwrap(), embed_block(&b, &p).unwrap());
    }

    #[test]
    fn embedding_is_position_sensitive() {
        let p = tiny_params(2, 2);
        let a = embed_block(&row(&[10, 20, 30], 6), &p).unwrap();
        let b = embed_block(&row(&[20, 10, 30], 6), &p).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let p = tiny_params(2, 0);
        let mut bad = row(&[1, 2], 6);
        bad.tokens[0] = VOCAB_SIZE as u16;
        assert!(matches!(embed_block(&bad, &p), Err(Error::Vocab(_))));
    }

    #[test]
    fn wrong_length_block_is_rejected() {
        let p = tiny_params(2, 0);
        let bad = row(&[1, 2], 4);
        assert!(matches!(embed_block(&bad, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn reconstruction_logits_shape_and_finiteness() {
        let p = tiny_params(2, 3);
        let e = embed_block(&row(&[5, 6], 6), &p).unwrap();
        let logits = reconstruct_block(&e, &p).unwrap();
        assert_eq!(logits.dim(), (6, VOCAB_SIZE));
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_config_reconstruction_is_144_by_257() {
        let mut cfg = ModelConfig::default();
        cfg.num_classes = 2;
        let p = ModelParams::init(&cfg, 0).unwrap();
        let block = row(&(0..144).map(|i| (i % 251) as u16).collect::<Vec<_>>(), 144);
        let e = embed_block(&block, &p).unwrap();
        assert_eq!(e.0.dim(), (1, 216));
        let logits = reconstruct_block(&e, &p).unwrap();
        assert_eq!(logits.dim(), (144, 257));
    }

    #[test]
    fn classify_single_block_and_shapes() {
        let p = tiny_params(5, 4);
        let e = embed_block(&row(&[1], 6), &p).unwrap();
        let logits = classify(&[e], &p).unwrap();
        assert_eq!(logits.len(), 5);
        assert!(matches!(classify(&[], &p), Err(Error::EmptyInput)));
    }

    #[test]
    fn classify_bytes_length_contract() {
        let p = tiny_params(2, 5);
        // Cap for the tiny config is 14 * 6 = 84 tokens.
        let ok = vec![7u16; 84];
        assert_eq!(classify_bytes(&ok, &p).unwrap().len(), 2);
        let too_long = vec![7u16; 85];
        assert!(matches!(classify_bytes(&too_long, &p), Err(Error::Length { .. })));
        let single = vec![7u16];
        assert_eq!(classify_bytes(&single, &p).unwrap().len(), 2);
    }

    #[test]
    fn joint_loss_uniform_logits_anchor() {
        let logits = Array2::zeros((6, VOCAB_SIZE));
        let block = row(&[1, 2, 3], 6);
        let parts = joint_loss(
            &[logits],
            std::slice::from_ref(&block),
            &[0.0, 0.0],
            &[1.0, 0.0],
            1.0,
            TaskKind::SingleLabel,
        )
        .unwrap();
        assert!((parts.recon - (VOCAB_SIZE as f64).ln()).abs() < 1e-12);
        assert!((parts.class - 2.0f64.ln()).abs() < 1e-12);
        assert!((parts.total - parts.recon - parts.class).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_lambda_zero_is_recon_only() {
        let logits = Array2::zeros((6, VOCAB_SIZE));
        let block = row(&[1, 2, 3], 6);
        let parts = joint_loss(
            &[logits],
            std::slice::from_ref(&block),
            &[3.0, -1.0],
            &[1.0, 0.0],
            0.0,
            TaskKind::SingleLabel,
        )
        .unwrap();
        assert_eq!(parts.total, parts.recon);
    }

    #[test]
    fn joint_loss_rejects_unnormalized_label() {
        let out = joint_loss(&[], &[], &[0.0, 0.0], &[0.7, 0.7], 1.0, TaskKind::SingleLabel);
        assert!(matches!(out, Err(Error::Label(_))));
    }

    #[test]
    fn lambda_zero_gives_zero_classifier_gradient() {
        let mut cfg = ModelConfig::tiny(2);
        cfg.lambda = 0.0;
        let p = ModelParams::init(&cfg, 6).unwrap();
        let example = TokenMatrix {
            rows: vec![row(&[1, 2, 3], 6), row(&[200, 201], 6)],
            label: Some(vec![1.0, 0.0]),
            duration_s: 0.0,
            truncated_rows: 0,
        };
        let (_, grads) = compute_gradients(&p, &[example], TaskKind::SingleLabel).unwrap();
        let head = grads.by_name(&p, "head.w").unwrap();
        assert!(head.iter().all(|&g| g == 0.0));
        // The block embedder still gets reconstruction gradient.
        let table = grads.by_name(&p, "byte_embedding").unwrap();
        assert!(table.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn predict_probs_sum_to_one() {
        let p = tiny_params(3, 7);
        let m = TokenMatrix {
            rows: vec![row(&[1, 2], 6); 4],
            label: None,
            duration_s: 0.0,
            truncated_rows: 0,
        };
        let probs = predict_probs(&m, &p, TaskKind::SingleLabel).unwrap();
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
