//! Desk-scale decoder-only transformer.

pub mod attention;
pub mod ffn;
pub mod generate;
pub mod gqa;
pub mod rope;
pub mod sequence;
pub mod stack;
pub mod vocab;

pub use attention::{
    attention, exact_attention, kernel_attention, kernel_terms, softmax_weights, split_attention, AttentionMode,
    AttentionParams, KernelTerms, Projection,
};
pub use ffn::{freeze_sigma, layer_forward, Activation, FfnParams, Layer};
pub use generate::{generate, GenerationStep, GenerationTrace, ToyModel};
pub use gqa::{gqa_attention, GqaConfig, GqaParams};
pub use rope::{apply_rope, rope, DEFAULT_ROPE_BASE};
pub use sequence::{Segment, SegmentedSequence};
pub use stack::{propagate, stack_forward, LayerStack, StackPass};
pub use vocab::{decode, Vocabulary};
