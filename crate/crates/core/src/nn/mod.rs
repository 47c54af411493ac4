//! Minimal differentiable engine: tape-based reverse-mode autodiff, the
//! layer zoo used by both prediction stages, Adam, and finite-difference
//! gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod tape;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use layers::{
    attention, decoder_layer, dense, encoder_layer, mlp2, multi_head, positional_encoding,
    Activation, AttentionParams, AttentionVars, CrossAttentionOrder, DecoderLayerParams,
    DecoderLayerVars, DenseParams, DenseVars, EncoderLayerParams, EncoderLayerVars,
    LayerNormParams, LayerNormVars, LAYER_NORM_EPS,
};
pub use tape::{row_norm_mean, Grads, Mat, Tape, Var};
