//! Transformer, multi-layer and grouped-query duals.

use nalgebra::DVector;

use crate::dual::{dual_forward, DemoSet, DualModel};
use crate::error::{Error, Result};
use crate::kernelmap::FourierFeatureMap;
use crate::model::attention::{
    kernel_terms, kernel_terms_window, AttentionParams, KernelTerms, KeyWindow, LayerInputs,
};
use crate::model::ffn::{freeze_sigma, FfnParams};
use crate::model::gqa::GqaParams;
use crate::model::sequence::SegmentedSequence;
use crate::model::stack::{propagate, LayerStack};
use crate::model::AttentionMode;

fn transformer_from_terms(terms: &KernelTerms, ffn: &FfnParams, map: &FourierFeatureMap) -> Result<DualModel> {
    if ffn.d_out() != terms.projection.query.len() {
        return Err(Error::InvalidDimension(format!(
            "ffn expects {}, attention gives {}",
            ffn.d_out(),
            terms.projection.query.len()
        )));
    }
    // Sigma_act frozen at the kernel-mode attention output.
    let h = terms.weighted_sum(|_| true);
    let sigma = freeze_sigma(ffn, &h);
    let w1_sigma = &ffn.w1 * &sigma;
    let w_hat = &w1_sigma * &ffn.w2 * terms.c;
    let bias = &ffn.b1 + &w1_sigma * &ffn.b2;
    Ok(DualModel::from_terms(terms, Some(w_hat), Some(bias), map, DemoSet::All))
}

/// Dual of one attention + FFN layer: `W^ = c W1 Sigma W2`,
/// `W_0 = W^ V_T phi(K_T)^T`, `b = b1 + W1 Sigma b2`.
pub fn build_dual_transformer(
    params: &AttentionParams,
    ffn: &FfnParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DualModel> {
    let terms = kernel_terms(params, map, seq, query_pos)?;
    transformer_from_terms(&terms, ffn, map)
}

/// One dual per layer, each built from the reference pass's layer inputs.
#[derive(Debug, Clone)]
pub struct DualStack {
    pub duals: Vec<DualModel>,
    pub query_pos: usize,
}

impl DualStack {
    /// Runs the duals layer by layer: each layer's query is formed from the
    /// previous dual's output mapped through `W_conn`.
    pub fn forward(&self, stack: &LayerStack, query_input: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = query_input.clone();
        for (l, (dual, layer)) in self.duals.iter().zip(stack.layers()).enumerate() {
            let q = layer.attention.query(self.query_pos, &x)?;
            let out = dual_forward(dual, &q)?;
            x = match stack.connections().get(l) {
                Some(conn) => conn * out,
                None => out,
            };
        }
        Ok(x)
    }

    /// Outputs of every layer's dual at its own build query.
    pub fn layer_outputs(&self) -> Vec<DVector<f64>> {
        self.duals.iter().map(DualModel::forward_at_build).collect()
    }
}

/// Duals for every layer of `stack` at `query_pos`.
pub fn build_dual_stack(
    stack: &LayerStack,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DualStack> {
    let pass = propagate(stack, &AttentionMode::Kernel(map.clone()), seq, query_pos)?;
    let duals = stack
        .layers()
        .iter()
        .zip(&pass.inputs)
        .map(|(layer, inputs)| {
            let view = LayerInputs { inputs, tags: &pass.tags };
            let terms = kernel_terms_window(&layer.attention, map, view, query_pos, KeyWindow::Preceding)?;
            transformer_from_terms(&terms, &layer.ffn, map)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DualStack { duals, query_pos })
}

/// Blockwise duals, one per query head, with label map `c^(s) W_concat^(s)`.
pub fn build_dual_gqa(
    gqa: &GqaParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<Vec<DualModel>> {
    (0..gqa.config.heads())
        .map(|s| {
            let terms = kernel_terms(&gqa.head(s)?, map, seq, query_pos)?;
            let w_hat = &gqa.config.mix[s] * terms.c;
            Ok(DualModel::from_terms(&terms, Some(w_hat), None, map, DemoSet::All))
        })
        .collect()
}

/// Concatenation of the block outputs at their build queries.
pub fn gqa_dual_forward(blocks: &[DualModel]) -> DVector<f64> {
    let parts: Vec<DVector<f64>> = blocks.iter().map(DualModel::forward_at_build).collect();
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(&p);
        at += p.len();
    }
    out
}
