//! Attention masks, baseline self-attention and composite text-query attention.

mod backward;
mod mask;
mod ops;

pub(crate) use backward::attend_backward;
pub use backward::{composite_attention_backward, CompositeAttentionGrads};
pub use mask::{build_causal_mask, build_trapezoidal_mask, AttentionMask, MaskKind};
pub(crate) use ops::{
    attend_heads, composite_attention_trace, self_attention_trace, validate_heads, visual_value_projection,
};
pub use ops::{
    causal_self_attention, composite_attention_forward, scaled_dot_attention, self_attention_forward, AttentionWeights,
};
