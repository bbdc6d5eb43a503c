//! Numeric substrate: tensors, reverse-mode autodiff, attention and
//! transformer building blocks, and a finite-difference gradient checker.

pub mod attention;
pub mod block;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use attention::{
    multi_head_attention, scaled_dot_attention, AttentionConfig, AttentionOutput, Mask, MaskKind,
    MultiHeadAttention,
};
pub use block::{transformer_block, BlockOutput, TransformerBlock};
pub use gradcheck::{grad_check, grad_check_params, relative_error, ABS_FLOOR};
pub use graph::{matmul_plain, Graph, Var, LAYER_NORM_EPS};
pub use layers::{layer_norm, FeedForward, LayerNorm, Linear};
pub use params::{Init, ParamId, ParamStore};
pub use tensor::Tensor;
