//! Dual linear models of kernelized attention.
//!
//! For a query at position `p` the kernel attention output is
//! `h = c V_T phi(K_T)^T phi(q) + c V_D phi(K_D)^T phi(q)`. Reading the task
//! part as a constant weight `W_0 = c V_T phi(K_T)^T` and the demonstration
//! part as minus a gradient, `h = (W_0 - grad) phi(q)`: the forward pass is one
//! gradient step of the linear model `f(q) = W phi(q)` under the loss
//! `L(W) = -(1/beta) sum_i (c v_i)^T W phi(k_i)`.
//!
//! Each demonstration token contributes one rank-one term
//! `left_i (x) right_i = (c v_i) (x) phi(k_i)`. The transformer, stack and GQA
//! variants only change `left_i` (it picks up the frozen FFN or the head mixing
//! matrix) and add a bias.

mod descent;
mod variants;

pub use descent::{descend, DescentState, Schedule, SeRecord};
pub use variants::{build_dual_gqa, build_dual_stack, build_dual_transformer, gqa_dual_forward, DualStack};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernelmap::FourierFeatureMap;
use crate::model::attention::{kernel_prescale, kernel_terms, AttentionParams, KernelTerms};
use crate::model::sequence::{Segment, SegmentedSequence};

/// One demonstration token's term `left (x) right`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOne {
    pub position: usize,
    pub source: Segment,
    /// Label side, `c v_i` (or `W^_trm v_i`).
    pub left: DVector<f64>,
    /// Sample side, `phi(k~_i)`.
    pub right: DVector<f64>,
}

impl RankOne {
    pub fn outer(&self) -> DMatrix<f64> {
        &self.left * self.right.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct DualModel {
    w0: DMatrix<f64>,
    contributions: Vec<RankOne>,
    c: f64,
    beta: f64,
    alpha: f64,
    bias: Option<DVector<f64>>,
    /// Maps a value vector to its label side; `None` means `c * v`.
    w_hat: Option<DMatrix<f64>>,
    map: FourierFeatureMap,
    query_pos: usize,
    query: DVector<f64>,
    query_features: DVector<f64>,
    task_positions: Vec<usize>,
}

/// Which demonstration tokens become contributions at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DemoSet {
    /// `I_D` and `I_D_per`.
    All,
    /// `I_D` only; perturbation tokens still count in `c`.
    CurrentOnly,
}

impl DualModel {
    pub(crate) fn from_terms(
        terms: &KernelTerms,
        w_hat: Option<DMatrix<f64>>,
        bias: Option<DVector<f64>>,
        map: &FourierFeatureMap,
        demos: DemoSet,
    ) -> Self {
        let proj = &terms.projection;
        let label = |v: &DVector<f64>| match &w_hat {
            Some(w) => w * v,
            None => v * terms.c,
        };
        let out_dim = match &w_hat {
            Some(w) => w.nrows(),
            None => proj.query.len(),
        };
        let mut w0 = DMatrix::zeros(out_dim, map.feature_dim());
        let mut contributions = Vec::new();
        let mut task_positions = Vec::new();
        for (i, &pos) in proj.positions.iter().enumerate() {
            let tag = proj.tags[i];
            let left = label(&proj.values[i]);
            let right = &terms.key_features[i];
            if tag.is_task() {
                w0.ger(1.0, &left, right, 1.0);
                task_positions.push(pos);
            } else if tag == Segment::Demo || demos == DemoSet::All {
                contributions.push(RankOne { position: pos, source: tag, left, right: right.clone() });
            }
        }
        Self {
            w0,
            contributions,
            c: terms.c,
            beta: 1.0,
            alpha: 0.0,
            bias,
            w_hat,
            map: map.clone(),
            query_pos: proj.query_pos,
            query: proj.query.clone(),
            query_features: terms.query_features.clone(),
            task_positions,
        }
    }

    /// Constant part `W_0`.
    pub fn w0(&self) -> &DMatrix<f64> {
        &self.w0
    }

    pub fn contributions(&self) -> &[RankOne] {
        &self.contributions
    }

    /// Kernel normalization `c`.
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bias(&self) -> Option<&DVector<f64>> {
        self.bias.as_ref()
    }

    /// `W^_trm` for transformer-style duals.
    pub fn w_hat(&self) -> Option<&DMatrix<f64>> {
        self.w_hat.as_ref()
    }

    pub fn map(&self) -> &FourierFeatureMap {
        &self.map
    }

    pub fn query_pos(&self) -> usize {
        self.query_pos
    }

    /// Rotated (unscaled) query used at build time.
    pub fn query(&self) -> &DVector<f64> {
        &self.query
    }

    pub fn query_features(&self) -> &DVector<f64> {
        &self.query_features
    }

    pub fn output_dim(&self) -> usize {
        self.w0.nrows()
    }

    /// Sets the learning rate `beta`. The updated weights do not depend on it.
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }

    /// Weights after one full descent step, `W_0 - grad`.
    pub fn updated_weights(&self) -> DMatrix<f64> {
        &self.w0 - grad_full(self)
    }

    pub(crate) fn eval(&self, weights: &DMatrix<f64>, features: &DVector<f64>) -> DVector<f64> {
        let mut out = weights * features;
        if let Some(b) = &self.bias {
            out += b;
        }
        out
    }

    /// `f(q)` at the build query.
    pub fn forward_at_build(&self) -> DVector<f64> {
        self.eval(&self.updated_weights(), &self.query_features)
    }

    fn label(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.w_hat {
            Some(w) => w * v,
            None => v * self.c,
        }
    }
}

/// Dual of the kernel attention at `query_pos`, with every demonstration and
/// perturbation token as a contribution.
pub fn build_dual_attention(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DualModel> {
    let terms = kernel_terms(params, map, seq, query_pos)?;
    Ok(DualModel::from_terms(&terms, None, None, map, DemoSet::All))
}

/// Like [`build_dual_attention`] but leaves perturbation tokens out of the
/// contributions, for adding them later with [`with_perturbation`].
pub fn build_dual_attention_current(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DualModel> {
    let terms = kernel_terms(params, map, seq, query_pos)?;
    Ok(DualModel::from_terms(&terms, None, None, map, DemoSet::CurrentOnly))
}

/// `f(q) = (W_0 - grad) phi(q~) + b` for an arbitrary rotated query `q`.
pub fn dual_forward(dual: &DualModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    if q.len() != dual.map.input_dim() {
        return Err(Error::InvalidDimension(format!(
            "query has dimension {}, dual expects {}",
            q.len(),
            dual.map.input_dim()
        )));
    }
    let features = dual.map.phi(&(q * kernel_prescale(q.len())))?;
    Ok(dual.eval(&dual.updated_weights(), &features))
}

/// `grad = -sum_i left_i (x) right_i + alpha W_0`.
///
/// At `alpha = 0` this is `beta * dL/dW`; with `alpha > 0` the L2 term is
/// taken at `W_0`, the start of the single step.
pub fn grad_full(dual: &DualModel) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dual.w0.nrows(), dual.w0.ncols());
    for r in &dual.contributions {
        g.ger(-1.0, &r.left, &r.right, 1.0);
    }
    if dual.alpha != 0.0 {
        g += &dual.w0 * dual.alpha;
    }
    g
}

/// `L(W) = -(1/beta) sum_i left_i^T (W right_i + b) + alpha/(2 beta) |W|_F^2`.
pub fn loss_icl(dual: &DualModel, w: &DMatrix<f64>) -> Result<f64> {
    check_weight_shape(dual, w)?;
    let mut fit = 0.0;
    for r in &dual.contributions {
        let pred = dual.eval(w, &r.right);
        fit += r.left.dot(&pred);
    }
    Ok(-fit / dual.beta + dual.alpha / (2.0 * dual.beta) * w.norm_squared())
}

/// Analytic `beta * dL/dW` at `w`.
pub fn loss_gradient(dual: &DualModel, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_weight_shape(dual, w)?;
    let mut g = w * dual.alpha;
    for r in &dual.contributions {
        g.ger(-1.0, &r.left, &r.right, 1.0);
    }
    Ok(g)
}

fn check_weight_shape(dual: &DualModel, w: &DMatrix<f64>) -> Result<()> {
    if w.shape() != dual.w0.shape() {
        return Err(Error::InvalidDimension(format!(
            "weights {:?} do not match dual {:?}",
            w.shape(),
            dual.w0.shape()
        )));
    }
    Ok(())
}

/// Adds loss terms for `per_indices`, computed with the dual's own `c`.
///
/// Indices must be key positions of the build query that are neither task
/// tokens nor already contributing.
pub fn with_perturbation(
    dual: &DualModel,
    params: &AttentionParams,
    seq: &SegmentedSequence,
    per_indices: &[usize],
) -> Result<DualModel> {
    let mut out = dual.clone();
    let scale = kernel_prescale(params.d_out());
    for &j in per_indices {
        if j == 0 || j >= dual.query_pos {
            return Err(Error::InvalidIndex(format!(
                "perturbation position {j} is not a key of query position {}",
                dual.query_pos
            )));
        }
        if out.contributions.iter().any(|r| r.position == j) {
            return Err(Error::InvalidIndex(format!("position {j} already contributes to the dual")));
        }
        if dual.task_positions.contains(&j) {
            return Err(Error::InvalidIndex(format!("position {j} is a task token")));
        }
        let x = seq.token(j)?;
        let left = dual.label(&params.value(x));
        let right = dual.map.phi(&(params.key(j, x)? * scale))?;
        out.contributions.push(RankOne { position: j, source: Segment::Perturbation, left, right });
    }
    out.contributions.sort_by_key(|r| r.position);
    Ok(out)
}

/// Adds the L2 term `alpha/(2 beta) |W|^2`; one full step then lands on
/// `(1 - alpha) W_0 + sum_i left_i (x) right_i`.
pub fn with_value_regularization(dual: &DualModel, alpha: f64) -> Result<DualModel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut out = dual.clone();
    out.alpha = alpha;
    Ok(out)
}

/// Appends `last_generated` as a lead token and rebuilds the dual at the new
/// last position from scratch (new `c`, new `W_0`, new query).
pub fn advance_start(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    last_generated: &DVector<f64>,
) -> Result<(SegmentedSequence, DualModel)> {
    let mut next = seq.clone();
    next.push(Segment::Lead, last_generated.clone())?;
    let dual = build_dual_attention(params, map, &next, next.last_position())?;
    Ok((next, dual))
}

/// Incremental start-point shift `W_0' = W_0 + c v (x) phi(k~)` for the token
/// that became a key, reusing the old `c`. Only an approximation: the exact
/// `c` changes with the key set and the query.
pub fn approximate_advance(
    dual: &DualModel,
    params: &AttentionParams,
    new_key: &DVector<f64>,
    new_key_pos: usize,
) -> Result<DMatrix<f64>> {
    let right = dual.map.phi(&(params.key(new_key_pos, new_key)? * kernel_prescale(params.d_out())))?;
    let left = dual.label(&params.value(new_key));
    let mut w0 = dual.w0.clone();
    w0.ger(1.0, &left, &right, 1.0);
    Ok(w0)
}

/// Both sides of the linear-model / linear-attention duality:
/// `(W_0 + sum_k e_k (x) x_k) x'` and `W_0 x' + LA(E, X, x')`.
pub fn linear_dual_equivalence(
    w0: &DMatrix<f64>,
    pairs: &[(DVector<f64>, DVector<f64>)],
    test: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    for (x, e) in pairs {
        if x.len() != w0.ncols() || e.len() != w0.nrows() {
            return Err(Error::InvalidDimension("training pair does not match W_0".into()));
        }
    }
    if test.len() != w0.ncols() {
        return Err(Error::InvalidDimension("test input does not match W_0".into()));
    }
    let mut updated = w0.clone();
    for (x, e) in pairs {
        updated.ger(1.0, e, x, 1.0);
    }
    let lhs = &updated * test;
    let mut attn = DVector::zeros(w0.nrows());
    for (x, e) in pairs {
        attn.axpy(x.dot(test), e, 1.0);
    }
    let rhs = w0 * test + attn;
    Ok((lhs, rhs))
}
