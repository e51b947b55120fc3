//! Projector, FFN, aligner, the two decoder layers and the stacked toy model.

mod aligner;
mod decoder;
mod ffn;
pub mod io;
mod model;

pub use aligner::{aligner_backward, aligner_forward, Aligner, AlignerGrads};
pub use decoder::{
    baseline_decoder_layer, composite_decoder_layer, composite_decoder_layer_backward, LayerGrads, LayerWeights,
};
pub(crate) use decoder::{baseline_layer_full, composite_layer_full};
pub use ffn::{ffn_backward, ffn_forward, gelu, gelu_grad, FfnGrads};
pub use model::{decoder_stack, embed_tokens, model_forward, projector_forward, Mode, Model, ModelConfig, INIT_STDDEV};
