//! The network and its training machinery: configuration and parameters,
//! reverse-mode autodiff, forward passes, losses, gradients, the optimizer,
//! analytic compute accounting, and checkpoint persistence.

mod checkpoint;
mod flops;
mod net;
mod optim;
mod params;
mod pe;
mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use flops::{attention_entries, flops_estimate};
pub use net::{
    batch_loss, classify, classify_bytes, compute_gradients, embed_block, joint_loss,
    predict_logits, predict_probs, reconstruct_block, softmax, BlockEmbedding, GradientSet,
    LossParts, TaskKind,
};
pub use optim::{AdamW, LrSchedule};
pub use params::{encoder_layer_param_count, param_count, ModelConfig, ModelParams};
pub use pe::sinusoidal_pe;
pub use tape::{Gradients, Tape, Var};
