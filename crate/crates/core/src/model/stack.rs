//! Multi-layer decoder stack.
//!
//! Layer `l > 1` consumes `x^(l)_i = W_conn^(l) x^^(l-1)_i` for every
//! position `i`, so every position is propagated through every layer. There
//! are no residual connections or normalization layers. Position 1 has no
//! preceding tokens and attends to itself inside the stack.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::attention::{AttentionMode, KeyWindow, LayerInputs};
use crate::model::ffn::Layer;
use crate::model::sequence::{Segment, SegmentedSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
    /// `connections[l - 1]` maps layer `l` output into layer `l + 1` input.
    connections: Vec<DMatrix<f64>>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, connections: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidDimension("a stack needs at least one layer".into()));
        }
        if connections.len() + 1 != layers.len() {
            return Err(Error::InvalidDimension(format!(
                "{} layers need {} connection matrices, got {}",
                layers.len(),
                layers.len() - 1,
                connections.len()
            )));
        }
        for (l, conn) in connections.iter().enumerate() {
            let expect = (layers[l + 1].attention.d_in(), layers[l].attention.d_out());
            if conn.shape() != expect {
                return Err(Error::InvalidDimension(format!(
                    "connection {} has shape {:?}, expected {:?}",
                    l + 2,
                    conn.shape(),
                    expect
                )));
            }
        }
        Ok(Self { layers, connections })
    }

    /// Identity connections; adjacent dimensions must agree.
    pub fn with_identity_connections(layers: Vec<Layer>) -> Result<Self> {
        let mut connections = Vec::with_capacity(layers.len().saturating_sub(1));
        for (l, w) in layers.windows(2).enumerate() {
            let (d_in, d_out) = (w[1].attention.d_in(), w[0].attention.d_out());
            if d_in != d_out {
                return Err(Error::InvalidDimension(format!(
                    "layer {} outputs {d_out} but layer {} takes {d_in}; pass an explicit connection",
                    l + 1,
                    l + 2
                )));
            }
            connections.push(DMatrix::identity(d_in, d_out));
        }
        Self::new(layers, connections)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn connections(&self) -> &[DMatrix<f64>] {
        &self.connections
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].attention.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].attention.d_out()
    }
}

/// Per-layer token inputs from a reference forward pass.
#[derive(Debug, Clone)]
pub struct StackPass {
    pub tags: Vec<Segment>,
    /// `inputs[l][i - 1]` is `x^(l+1)_i`, positions `1..=query_pos`.
    pub inputs: Vec<Vec<DVector<f64>>>,
    /// Final-layer output at the query position.
    pub output: DVector<f64>,
}

/// Runs every position up to `query_pos` through every layer.
pub fn propagate(
    stack: &LayerStack,
    mode: &AttentionMode,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<StackPass> {
    if query_pos < 2 || query_pos > seq.len() {
        return Err(Error::InvalidIndex(format!("query position {query_pos} outside 2..={}", seq.len())));
    }
    if seq.dim() != stack.d_in() {
        return Err(Error::InvalidDimension(format!(
            "sequence dimension {} does not match stack input {}",
            seq.dim(),
            stack.d_in()
        )));
    }
    let tags = seq.tags()[..query_pos].to_vec();
    let mut current: Vec<DVector<f64>> = seq.tokens()[..query_pos].to_vec();
    let mut inputs = Vec::with_capacity(stack.depth());
    let mut output = DVector::zeros(0);
    for (l, layer) in stack.layers.iter().enumerate() {
        let view = LayerInputs { inputs: &current, tags: &tags };
        let last = l + 1 == stack.depth();
        let next: Vec<DVector<f64>> = if last {
            Vec::new()
        } else {
            (1..=query_pos)
                .map(|i| layer.forward_inputs(mode, view, i, KeyWindow::PrecedingOrSelf))
                .collect::<Result<_>>()?
        };
        if last {
            output = layer.forward_inputs(mode, view, query_pos, KeyWindow::Preceding)?;
        }
        inputs.push(std::mem::take(&mut current));
        if !last {
            let conn = &stack.connections[l];
            current = next.iter().map(|x| conn * x).collect();
        }
    }
    Ok(StackPass { tags, inputs, output })
}

/// `x^^(L)` at `query_pos`.
pub fn stack_forward(
    stack: &LayerStack,
    mode: &AttentionMode,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DVector<f64>> {
    Ok(propagate(stack, mode, seq, query_pos)?.output)
}
