//! Dense numerical substrate: matrices, masked attention, decoder layers,
//! cross-entropy and a tape-based gradient engine.

mod gradcheck;
mod graph;
mod layers;
mod mask;
mod matrix;
mod params;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{
    binary_cross_entropy_from_logits, cross_entropy_row, masked_softmax, Graph, NodeId,
    LAYER_NORM_EPS, MASK_LOGIT,
};
pub use layers::{
    layer_norm, linear, multi_head_attention, register_attention, register_layer_norm,
    register_linear, transformer_decoder_layer, DecoderLayerSpec, ForwardMode,
};
pub use mask::AttentionMask;
pub use matrix::Matrix;
pub use params::{Gradients, Param, ParamStore};

#[cfg(test)]
mod tests;
