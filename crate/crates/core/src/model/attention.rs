//! Single-head masked attention with RoPE, exact or kernelized.
//!
//! The query at position `p` is `R_p W_q x_p`; keys `R_i W_k x_i` and values
//! `W_v x_i` come from the strictly preceding positions `1..p-1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernelmap::FourierFeatureMap;
use crate::model::rope::{apply_rope, DEFAULT_ROPE_BASE};
use crate::model::sequence::{Segment, SegmentedSequence};

/// Denominators of `c` smaller than this are rejected.
pub const MIN_NORMALIZER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    w_q: DMatrix<f64>,
    w_k: DMatrix<f64>,
    w_v: DMatrix<f64>,
    rope_base: f64,
}

impl AttentionParams {
    pub fn new(w_q: DMatrix<f64>, w_k: DMatrix<f64>, w_v: DMatrix<f64>) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.shape() != w_v.shape() {
            return Err(Error::InvalidDimension(format!(
                "projection shapes differ: q {:?}, k {:?}, v {:?}",
                w_q.shape(),
                w_k.shape(),
                w_v.shape()
            )));
        }
        if w_q.nrows() == 0 || w_q.ncols() == 0 {
            return Err(Error::InvalidDimension("projections must be non-empty".into()));
        }
        Ok(Self { w_q, w_k, w_v, rope_base: DEFAULT_ROPE_BASE })
    }

    pub fn with_rope_base(mut self, base: f64) -> Result<Self> {
        if !(base > 1.0 && base.is_finite()) {
            return Err(Error::InvalidParameter(format!("rope base must exceed 1, got {base}")));
        }
        self.rope_base = base;
        Ok(self)
    }

    pub fn w_q(&self) -> &DMatrix<f64> {
        &self.w_q
    }

    pub fn w_k(&self) -> &DMatrix<f64> {
        &self.w_k
    }

    pub fn w_v(&self) -> &DMatrix<f64> {
        &self.w_v
    }

    pub fn rope_base(&self) -> f64 {
        self.rope_base
    }

    /// Output dimension `d_o`.
    pub fn d_out(&self) -> usize {
        self.w_q.nrows()
    }

    /// Input dimension `d_i`.
    pub fn d_in(&self) -> usize {
        self.w_q.ncols()
    }

    /// Copy with the value projection replaced, used for value-head scaling.
    pub fn with_value(&self, w_v: DMatrix<f64>) -> Result<Self> {
        Self::new(self.w_q.clone(), self.w_k.clone(), w_v)?.with_rope_base(self.rope_base)
    }

    pub fn query(&self, pos: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        apply_rope(pos, &(&self.w_q * x), self.rope_base)
    }

    pub fn key(&self, pos: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        apply_rope(pos, &(&self.w_k * x), self.rope_base)
    }

    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w_v * x
    }
}

/// How attention scores are turned into weights.
#[derive(Debug, Clone)]
pub enum AttentionMode {
    /// Softmax with max subtraction.
    Exact,
    /// `c * phi(k~)^T phi(q~)` through a random Fourier feature map.
    Kernel(FourierFeatureMap),
}

impl AttentionMode {
    pub fn map(&self) -> Option<&FourierFeatureMap> {
        match self {
            AttentionMode::Exact => None,
            AttentionMode::Kernel(m) => Some(m),
        }
    }
}

/// Which preceding positions a query attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum KeyWindow {
    /// `1..p-1`; position 1 is an error.
    Preceding,
    /// `1..p-1`, except position 1 attends to itself. Used when every
    /// position of a layer must produce an output.
    PrecedingOrSelf,
}

/// Token inputs seen by one attention layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerInputs<'a> {
    pub inputs: &'a [DVector<f64>],
    pub tags: &'a [Segment],
}

impl<'a> LayerInputs<'a> {
    pub fn of(seq: &'a SegmentedSequence) -> Self {
        Self { inputs: seq.tokens(), tags: seq.tags() }
    }

    pub fn key_positions(&self, query_pos: usize, window: KeyWindow) -> Result<Vec<usize>> {
        let n = self.inputs.len();
        if query_pos == 0 || query_pos > n {
            return Err(Error::InvalidIndex(format!("query position {query_pos} outside 1..={n}")));
        }
        if query_pos == 1 {
            return match window {
                KeyWindow::Preceding => {
                    Err(Error::InvalidIndex("query position must be >= 2 to have preceding tokens".into()))
                }
                KeyWindow::PrecedingOrSelf => Ok(vec![1]),
            };
        }
        Ok((1..query_pos).collect())
    }
}

/// Keys and values for one query, before any weighting.
#[derive(Debug, Clone)]
pub struct Projection {
    pub query_pos: usize,
    /// Rotated query `R_p W_q x_p`.
    pub query: DVector<f64>,
    pub positions: Vec<usize>,
    pub tags: Vec<Segment>,
    pub keys: Vec<DVector<f64>>,
    pub values: Vec<DVector<f64>>,
}

pub(crate) fn project(
    params: &AttentionParams,
    inputs: LayerInputs<'_>,
    query_pos: usize,
    window: KeyWindow,
) -> Result<Projection> {
    let positions = inputs.key_positions(query_pos, window)?;
    let x_q = &inputs.inputs[query_pos - 1];
    check_input_dim(params, x_q)?;
    let query = params.query(query_pos, x_q)?;
    let mut keys = Vec::with_capacity(positions.len());
    let mut values = Vec::with_capacity(positions.len());
    let mut tags = Vec::with_capacity(positions.len());
    for &i in &positions {
        let x = &inputs.inputs[i - 1];
        check_input_dim(params, x)?;
        keys.push(params.key(i, x)?);
        values.push(params.value(x));
        tags.push(inputs.tags[i - 1]);
    }
    Ok(Projection { query_pos, query, positions, tags, keys, values })
}

fn check_input_dim(params: &AttentionParams, x: &DVector<f64>) -> Result<()> {
    if x.len() != params.d_in() {
        return Err(Error::InvalidDimension(format!(
            "token dimension {} does not match projection input {}",
            x.len(),
            params.d_in()
        )));
    }
    Ok(())
}

/// Scale applied to keys and queries before `phi`, so that
/// `phi(k~).phi(q~)` targets `exp(k.q / sqrt(d_o))`.
pub fn kernel_prescale(d_out: usize) -> f64 {
    (d_out as f64).powf(-0.25)
}

/// Kernel weights for one query.
#[derive(Debug, Clone)]
pub struct KernelTerms {
    pub projection: Projection,
    /// `phi(q~)`.
    pub query_features: DVector<f64>,
    /// `phi(k~_i)` for each key.
    pub key_features: Vec<DVector<f64>>,
    /// Unnormalized weights `phi(k~_i)^T phi(q~)`.
    pub weights: Vec<f64>,
    /// `c = (sum_i weights_i)^{-1}`.
    pub c: f64,
}

impl KernelTerms {
    /// `c * sum_{i in selected} w_i v_i`.
    pub fn weighted_sum(&self, select: impl Fn(Segment) -> bool) -> DVector<f64> {
        let mut out = DVector::zeros(self.projection.query.len());
        for ((v, w), tag) in self.projection.values.iter().zip(&self.weights).zip(&self.projection.tags) {
            if select(*tag) {
                out.axpy(self.c * w, v, 1.0);
            }
        }
        out
    }
}

pub(crate) fn kernel_terms_from(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    projection: Projection,
) -> Result<KernelTerms> {
    if map.input_dim() != params.d_out() {
        return Err(Error::InvalidDimension(format!(
            "feature map input {} does not match attention output {}",
            map.input_dim(),
            params.d_out()
        )));
    }
    let scale = kernel_prescale(params.d_out());
    let query_features = map.phi(&(&projection.query * scale))?;
    let key_features = projection.keys.iter().map(|k| map.phi(&(k * scale))).collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = key_features.iter().map(|f| f.dot(&query_features)).collect();
    let denominator: f64 = weights.iter().sum();
    if denominator.is_nan() || denominator.abs() < MIN_NORMALIZER {
        return Err(Error::NormalizationDegenerate { denominator });
    }
    Ok(KernelTerms { projection, query_features, key_features, weights, c: 1.0 / denominator })
}

pub(crate) fn kernel_terms_window(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    inputs: LayerInputs<'_>,
    query_pos: usize,
    window: KeyWindow,
) -> Result<KernelTerms> {
    kernel_terms_from(params, map, project(params, inputs, query_pos, window)?)
}

/// Kernel weights at `query_pos` of `seq`.
pub fn kernel_terms(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<KernelTerms> {
    kernel_terms_window(params, map, LayerInputs::of(seq), query_pos, KeyWindow::Preceding)
}

/// Softmax weights over `k_i.q / sqrt(d_o)`, summing to one.
pub fn softmax_weights(projection: &Projection) -> Vec<f64> {
    let scale = 1.0 / (projection.query.len() as f64).sqrt();
    let scores: Vec<f64> = projection.keys.iter().map(|k| k.dot(&projection.query) * scale).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn attend(
    params: &AttentionParams,
    mode: &AttentionMode,
    inputs: LayerInputs<'_>,
    query_pos: usize,
    window: KeyWindow,
) -> Result<DVector<f64>> {
    match mode {
        AttentionMode::Exact => {
            let p = project(params, inputs, query_pos, window)?;
            let w = softmax_weights(&p);
            let mut out = DVector::zeros(params.d_out());
            for (v, wi) in p.values.iter().zip(&w) {
                out.axpy(*wi, v, 1.0);
            }
            Ok(out)
        }
        AttentionMode::Kernel(map) => {
            Ok(kernel_terms_window(params, map, inputs, query_pos, window)?.weighted_sum(|_| true))
        }
    }
}

/// `V softmax(K^T q / sqrt(d_o))` at `query_pos`.
pub fn exact_attention(params: &AttentionParams, seq: &SegmentedSequence, query_pos: usize) -> Result<DVector<f64>> {
    attend(params, &AttentionMode::Exact, LayerInputs::of(seq), query_pos, KeyWindow::Preceding)
}

/// `c V phi(K~)^T phi(q~)` at `query_pos`.
pub fn kernel_attention(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DVector<f64>> {
    Ok(kernel_terms(params, map, seq, query_pos)?.weighted_sum(|_| true))
}

/// Task and demonstration contributions `(h_T, h_D)`, with `h_T + h_D` the
/// kernel attention output. Perturbation tokens count as demonstration.
pub fn split_attention(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let terms = kernel_terms(params, map, seq, query_pos)?;
    Ok((terms.weighted_sum(Segment::is_task), terms.weighted_sum(|t| !t.is_task())))
}

/// Attention at `query_pos` in either mode.
pub fn attention(
    params: &AttentionParams,
    mode: &AttentionMode,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DVector<f64>> {
    attend(params, mode, LayerInputs::of(seq), query_pos, KeyWindow::Preceding)
}
