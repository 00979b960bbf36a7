//! Autoregressive generation over any toy model.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernelmap::FourierFeatureMap;
use crate::model::attention::{attention, AttentionMode, AttentionParams};
use crate::model::ffn::{layer_forward, FfnParams};
use crate::model::gqa::{gqa_attention, GqaParams};
use crate::model::sequence::{Segment, SegmentedSequence};
use crate::model::stack::{stack_forward, LayerStack};
use crate::model::vocab::{decode, Vocabulary};

/// The model variants that can drive generation.
#[derive(Debug, Clone)]
pub enum ToyModel {
    Attention { params: AttentionParams, mode: AttentionMode },
    Layer { params: AttentionParams, ffn: FfnParams, mode: AttentionMode },
    Stack { stack: LayerStack, mode: AttentionMode },
    Gqa { params: GqaParams, map: FourierFeatureMap },
}

impl ToyModel {
    pub fn forward(&self, seq: &SegmentedSequence, query_pos: usize) -> Result<DVector<f64>> {
        match self {
            ToyModel::Attention { params, mode } => attention(params, mode, seq, query_pos),
            ToyModel::Layer { params, ffn, mode } => layer_forward(params, ffn, mode, seq, query_pos),
            ToyModel::Stack { stack, mode } => stack_forward(stack, mode, seq, query_pos),
            ToyModel::Gqa { params, map } => gqa_attention(params, map, seq, query_pos),
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            ToyModel::Attention { params, .. } | ToyModel::Layer { params, .. } => params.d_in(),
            ToyModel::Stack { stack, .. } => stack.d_in(),
            ToyModel::Gqa { params, .. } => params.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            ToyModel::Attention { params, .. } | ToyModel::Layer { params, .. } => params.d_out(),
            ToyModel::Stack { stack, .. } => stack.d_out(),
            ToyModel::Gqa { params, .. } => params.config.d_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStep {
    /// Position of the query token that produced this output.
    pub position: usize,
    pub token_id: usize,
    pub hidden: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub steps: Vec<GenerationStep>,
    /// The prompt with every generated token appended as lead.
    pub sequence: SegmentedSequence,
}

impl GenerationTrace {
    pub fn ids(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.token_id).collect()
    }
}

/// Greedy generation: forward at the last position, decode, append the
/// decoded token's input embedding as a lead token, repeat.
pub fn generate(
    model: &ToyModel,
    seq: &SegmentedSequence,
    steps: usize,
    vocab: &Vocabulary,
    mask: Option<&BTreeSet<usize>>,
) -> Result<GenerationTrace> {
    if steps == 0 {
        return Err(Error::InvalidParameter("generation needs at least one step".into()));
    }
    if vocab.input_dim() != seq.dim() {
        return Err(Error::InvalidDimension(format!(
            "vocabulary inputs are {}-dimensional, sequence is {}",
            vocab.input_dim(),
            seq.dim()
        )));
    }
    let mask = mask.or(seq.candidate_mask());
    let mut seq = seq.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let position = seq.last_position();
        let hidden = model.forward(&seq, position)?;
        let token_id = decode(vocab, &hidden, mask)?;
        seq.push(Segment::Lead, vocab.input_embedding(token_id).clone())?;
        out.push(GenerationStep { position, token_id, hidden });
    }
    Ok(GenerationTrace { steps: out, sequence: seq })
}
