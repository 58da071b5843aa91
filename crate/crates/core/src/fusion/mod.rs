//! Illumination-guided feature fusion.
//!
//! The network has three per-token MLPs:
//!
//! * `mlp_a` turns the secondary encoder branch (run on the degraded frame)
//!   into an illumination indicator `F_illu`, by default pooled to a single
//!   global vector and broadcast to every token;
//! * `mlp_b` projects raw event-frame features into `F_event`;
//! * `mlp_fusion` maps the per-token concatenation
//!   `[F_extreme, F_illu, F_event]` back to the vision feature width.
//!
//! Training minimizes the element-mean squared error between the fused
//! output and the encoder's features of the normal-light frame. Gradients are
//! derived by hand and checked against central differences.

mod adam;
mod baselines;
pub mod checkpoint;
mod gradcheck;
mod lora;
mod mlp;
mod model;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use baselines::{baseline_postfusion, baseline_prefusion};
pub use gradcheck::{fd_gradcheck, fd_gradcheck_fn};
pub use lora::{lora_attach, lora_merge, AdaptedModel, LoraAdapter, LoraConfig, LoraSet};
pub use mlp::{Linear, Mlp, MlpCache, MlpGrads};
pub use model::{
    backward, fusion_forward, loss_ic, loss_ic_grad, BatchGrad, FusionConfig, FusionDims, FusionGrads,
    FusionModel, IlluMode, Triplet,
};
pub use train::{train_model, train_stage1, train_stage2_lora, TrainConfig};
