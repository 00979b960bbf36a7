//! Seeded random models, prompts and vocabularies.
//!
//! Used by the invariant suites, the harness and tests. Matrix entries are
//! `N(0, scale^2 / cols)` so projections of unit tokens stay O(scale).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::kernelmap::FourierFeatureMap;
use crate::model::{
    Activation, AttentionParams, FfnParams, GqaConfig, GqaParams, Layer, LayerStack, SegmentedSequence, Vocabulary,
};
use crate::rng::{stream, StreamRng};

fn normals(r: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

pub fn random_matrix(seed: u64, label: &str, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    let mut r = stream(seed, label);
    let s = scale / (cols.max(1) as f64).sqrt();
    DMatrix::from_row_slice(rows, cols, &normals(&mut r, rows * cols)) * s
}

pub fn random_vector(seed: u64, label: &str, n: usize, scale: f64) -> DVector<f64> {
    let mut r = stream(seed, label);
    DVector::from_vec(normals(&mut r, n)) * scale
}

pub fn random_unit(seed: u64, label: &str, dim: usize) -> DVector<f64> {
    let v = random_vector(seed, label, dim, 1.0);
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        DVector::from_fn(dim, |i, _| if i == 0 { 1.0 } else { 0.0 })
    }
}

fn tokens(seed: u64, label: &str, dim: usize, count: usize) -> Vec<DVector<f64>> {
    (0..count).map(|i| random_unit(seed, &format!("{label}/{i}"), dim)).collect()
}

/// Unit-norm prompt `[instruction | demo | lead]`.
pub fn random_sequence(seed: u64, dim: usize, n_instr: usize, n_demo: usize, n_lead: usize) -> SegmentedSequence {
    SegmentedSequence::from_parts(
        dim,
        true,
        &tokens(seed, "seq/instr", dim, n_instr),
        &tokens(seed, "seq/demo", dim, n_demo),
        &[],
        &tokens(seed, "seq/lead", dim, n_lead),
    )
    .expect("unit tokens of matching dimension")
}

/// Like [`random_sequence`] with perturbation tokens between demo and lead.
pub fn random_perturbed_sequence(
    seed: u64,
    dim: usize,
    n_instr: usize,
    n_demo: usize,
    n_per: usize,
    n_lead: usize,
) -> SegmentedSequence {
    SegmentedSequence::from_parts(
        dim,
        true,
        &tokens(seed, "seq/instr", dim, n_instr),
        &tokens(seed, "seq/demo", dim, n_demo),
        &tokens(seed, "seq/per", dim, n_per),
        &tokens(seed, "seq/lead", dim, n_lead),
    )
    .expect("unit tokens of matching dimension")
}

pub fn random_attention(seed: u64, d_in: usize, d_out: usize) -> AttentionParams {
    AttentionParams::new(
        random_matrix(seed, "attn/wq", d_out, d_in, 1.0),
        random_matrix(seed, "attn/wk", d_out, d_in, 1.0),
        random_matrix(seed, "attn/wv", d_out, d_in, 1.0),
    )
    .expect("matching shapes")
}

pub fn random_ffn(seed: u64, d_out: usize, d_hidden: usize, activation: Activation) -> FfnParams {
    FfnParams::new(
        random_matrix(seed, "ffn/w1", d_out, d_hidden, 1.0),
        random_vector(seed, "ffn/b1", d_out, 0.1),
        random_matrix(seed, "ffn/w2", d_hidden, d_out, 1.0),
        random_vector(seed, "ffn/b2", d_hidden, 0.1),
        activation,
    )
    .expect("matching shapes")
}

pub fn random_layer(seed: u64, d_in: usize, d_out: usize, d_hidden: usize, activation: Activation) -> Layer {
    Layer::new(random_attention(seed, d_in, d_out), random_ffn(seed, d_out, d_hidden, activation))
        .expect("matching shapes")
}

/// `depth` layers of width `d`, identity connections.
pub fn random_stack(seed: u64, depth: usize, d: usize, d_hidden: usize) -> LayerStack {
    let layers = (0..depth)
        .map(|l| {
            random_layer(crate::rng::derive_indexed(seed, "stack/layer", l as u64), d, d, d_hidden, Activation::Relu)
        })
        .collect();
    LayerStack::with_identity_connections(layers).expect("square layers")
}

pub fn random_gqa(seed: u64, n: usize, g: usize, d_in: usize, d_out: usize) -> GqaParams {
    let config = GqaConfig::new(n, g, d_out).expect("divisible");
    let hd = config.head_dim();
    let queries = (0..n * g).map(|s| random_matrix(seed, &format!("gqa/q{s}"), hd, d_in, 1.0)).collect();
    let keys = (0..n).map(|i| random_matrix(seed, &format!("gqa/k{i}"), hd, d_in, 1.0)).collect();
    let values = (0..n).map(|i| random_matrix(seed, &format!("gqa/v{i}"), hd, d_in, 1.0)).collect();
    GqaParams::new(config, queries, keys, values).expect("matching shapes")
}

/// Gaussian output rows, unit-norm input rows.
pub fn random_vocabulary(seed: u64, size: usize, d_out: usize, d_in: usize) -> Vocabulary {
    let output = (0..size).map(|i| random_vector(seed, &format!("vocab/out{i}"), d_out, 1.0)).collect();
    let input = (0..size).map(|i| random_unit(seed, &format!("vocab/in{i}"), d_in)).collect();
    Vocabulary::new(output, input).expect("non-empty tables")
}

/// `|a - b| / max(|b|, 1e-12)` in the Euclidean norm.
pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Matrix counterpart of [`rel_diff`] in the Frobenius norm.
pub fn rel_diff_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Dimensions of one random attention case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseShape {
    pub d_in: usize,
    pub d_out: usize,
    pub n_instr: usize,
    pub n_demo: usize,
    pub n_lead: usize,
}

impl CaseShape {
    /// Uniform within `d_i <= 16, d_o <= 8, 4 <= N_T <= 20, 2 <= N_D <= 12, 1 <= k <= 3`.
    pub fn sample(seed: u64) -> Self {
        let mut r = stream(seed, "case/shape");
        Self {
            d_in: r.random_range(2..=16),
            d_out: r.random_range(1..=8),
            n_instr: r.random_range(4..=20),
            n_demo: r.random_range(2..=12),
            n_lead: r.random_range(1..=3),
        }
    }
}

/// A random single-head configuration with its feature map.
#[derive(Debug, Clone)]
pub struct AttentionCase {
    pub seed: u64,
    pub shape: CaseShape,
    pub params: AttentionParams,
    pub map: FourierFeatureMap,
    pub seq: SegmentedSequence,
}

impl AttentionCase {
    pub fn new(seed: u64, shape: CaseShape, feature_dim: usize) -> Self {
        let map = FourierFeatureMap::sample(shape.d_out, feature_dim, 1.0, crate::rng::derive_seed(seed, "case/map"))
            .expect("valid map parameters");
        Self {
            seed,
            shape,
            params: random_attention(seed, shape.d_in, shape.d_out),
            map,
            seq: random_sequence(seed, shape.d_in, shape.n_instr, shape.n_demo, shape.n_lead),
        }
    }

    pub fn sample(seed: u64, feature_dim: usize) -> Self {
        Self::new(seed, CaseShape::sample(seed), feature_dim)
    }

    pub fn query_pos(&self) -> usize {
        self.seq.len()
    }
}
