//! Grouped-query attention in kernel mode.
//!
//! `n * g` query heads of width `head_dim = d_o / (n g)`. Query head `s`
//! (0-based) reads key/value group `s / g`, so each group serves `g`
//! consecutive heads. Head outputs are mixed by a constant per-head matrix
//! `W_concat^(s)` and concatenated.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernelmap::FourierFeatureMap;
use crate::model::attention::{kernel_terms, AttentionParams};
use crate::model::rope::DEFAULT_ROPE_BASE;
use crate::model::sequence::SegmentedSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct GqaConfig {
    pub n: usize,
    pub g: usize,
    pub d_out: usize,
    /// One `head_dim x head_dim` mixing matrix per query head.
    pub mix: Vec<DMatrix<f64>>,
}

impl GqaConfig {
    /// Identity mixing.
    pub fn new(n: usize, g: usize, d_out: usize) -> Result<Self> {
        let heads = n * g;
        if n == 0 || g == 0 || d_out == 0 || !d_out.is_multiple_of(heads) {
            return Err(Error::InvalidDimension(format!("d_o = {d_out} must be a positive multiple of n*g = {heads}")));
        }
        let head_dim = d_out / heads;
        Ok(Self { n, g, d_out, mix: vec![DMatrix::identity(head_dim, head_dim); heads] })
    }

    pub fn with_mix(mut self, mix: Vec<DMatrix<f64>>) -> Result<Self> {
        let hd = self.head_dim();
        if mix.len() != self.heads() || mix.iter().any(|m| m.shape() != (hd, hd)) {
            return Err(Error::InvalidDimension(format!(
                "expected {} mixing matrices of shape {hd}x{hd}",
                self.heads()
            )));
        }
        self.mix = mix;
        Ok(self)
    }

    pub fn heads(&self) -> usize {
        self.n * self.g
    }

    pub fn groups(&self) -> usize {
        self.n
    }

    pub fn head_dim(&self) -> usize {
        self.d_out / self.heads()
    }

    /// Key/value group read by query head `s` (0-based).
    pub fn group_of(&self, head: usize) -> usize {
        head / self.g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GqaParams {
    pub config: GqaConfig,
    /// Per-head `head_dim x d_i` query projections.
    pub queries: Vec<DMatrix<f64>>,
    /// Per-group key projections.
    pub keys: Vec<DMatrix<f64>>,
    /// Per-group value projections.
    pub values: Vec<DMatrix<f64>>,
    pub rope_base: f64,
}

impl GqaParams {
    pub fn new(
        config: GqaConfig,
        queries: Vec<DMatrix<f64>>,
        keys: Vec<DMatrix<f64>>,
        values: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if queries.len() != config.heads() || keys.len() != config.groups() || values.len() != config.groups() {
            return Err(Error::InvalidDimension(format!(
                "need {} query heads and {} key/value groups, got {}/{}/{}",
                config.heads(),
                config.groups(),
                queries.len(),
                keys.len(),
                values.len()
            )));
        }
        let d_in = queries[0].ncols();
        let hd = config.head_dim();
        if queries.iter().chain(&keys).chain(&values).any(|m| m.shape() != (hd, d_in)) {
            return Err(Error::InvalidDimension(format!("every projection must be {hd}x{d_in}")));
        }
        Ok(Self { config, queries, keys, values, rope_base: DEFAULT_ROPE_BASE })
    }

    pub fn d_in(&self) -> usize {
        self.queries[0].ncols()
    }

    /// Single-head parameters seen by query head `s`.
    pub fn head(&self, s: usize) -> Result<AttentionParams> {
        let grp = self.config.group_of(s);
        AttentionParams::new(self.queries[s].clone(), self.keys[grp].clone(), self.values[grp].clone())?
            .with_rope_base(self.rope_base)
    }
}

/// Concatenated mixed head outputs, length `d_o`.
pub fn gqa_attention(
    gqa: &GqaParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DVector<f64>> {
    let hd = gqa.config.head_dim();
    let mut out = DVector::zeros(gqa.config.d_out);
    for s in 0..gqa.config.heads() {
        let head = gqa.head(s)?;
        let h = kernel_terms(&head, map, seq, query_pos)?.weighted_sum(|_| true);
        out.rows_mut(s * hd, hd).copy_from(&(&gqa.config.mix[s] * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::attention::kernel_attention;
    use crate::testkit::{random_gqa, random_matrix, random_sequence};

    #[test]
    fn one_head_is_plain_kernel_attention() {
        let gqa = random_gqa(3, 1, 1, 5, 4);
        let map = FourierFeatureMap::sample(4, 128, 1.0, 3).unwrap();
        let seq = random_sequence(3, 5, 6, 3, 2);
        let a = gqa_attention(&gqa, &map, &seq, seq.len()).unwrap();
        let b = kernel_attention(&gqa.head(0).unwrap(), &map, &seq, seq.len()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_and_divisibility() {
        let gqa = random_gqa(4, 2, 2, 5, 8);
        let map = FourierFeatureMap::sample(2, 64, 1.0, 4).unwrap();
        let seq = random_sequence(4, 5, 4, 3, 1);
        assert_eq!(gqa_attention(&gqa, &map, &seq, seq.len()).unwrap().len(), 8);
        assert!(matches!(GqaConfig::new(2, 2, 6), Err(Error::InvalidDimension(_))));
        assert!(matches!(GqaConfig::new(0, 2, 8), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn matches_per_head_loop() {
        let (n, g, d_i, d_o) = (2, 2, 6, 8);
        let hd = d_o / (n * g);
        let mix: Vec<DMatrix<f64>> = (0..n * g).map(|s| random_matrix(13, &format!("mix{s}"), hd, hd, 1.0)).collect();
        let mut gqa = random_gqa(13, n, g, d_i, d_o);
        gqa.config = gqa.config.clone().with_mix(mix.clone()).unwrap();
        let map = FourierFeatureMap::sample(hd, 256, 1.0, 13).unwrap();
        let seq = random_sequence(13, d_i, 7, 5, 2);
        let p = seq.len();
        let got = gqa_attention(&gqa, &map, &seq, p).unwrap();

        // heads s = i*g + j share group i
        for i in 0..n {
            for j in 0..g {
                let s = i * g + j;
                let head =
                    AttentionParams::new(gqa.queries[s].clone(), gqa.keys[i].clone(), gqa.values[i].clone()).unwrap();
                let h = &mix[s] * kernel_attention(&head, &map, &seq, p).unwrap();
                let block = got.rows(s * hd, hd).into_owned();
                assert!((block - &h).norm() <= 1e-12 * h.norm().max(1.0));
            }
        }
    }
}
