//! Random Fourier feature map for the exponential kernel.
//!
//! `phi(x) = e^{|x|^2/2} / sqrt(D) * (sin(u_1.x), .., sin(u_{D/2}.x), cos(u_1.x), .., cos(u_{D/2}.x))`
//! with `u_i ~ N(0, sigma^2 I)`. Because `sin^2 + cos^2 = 1`, `|phi(x)|^2` is
//! exactly `e^{|x|^2} / 2` for every draw, and `phi(x).phi(y)` estimates
//! `e^{x.y} / 2`. [`FourierFeatureMap::exp_estimate`] restores the factor 2;
//! attention never needs it because the normalization `c` absorbs any
//! constant scale.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Default number of features.
pub const DEFAULT_FEATURE_DIM: usize = 128;

/// Inputs with `|x|^2` above this are rejected, `e^{250}` is near the top of
/// the f64 range once squared in an inner product.
pub const OVERFLOW_NORM_SQ: f64 = 500.0;

#[derive(Debug, Clone)]
pub struct FourierFeatureMap {
    input_dim: usize,
    feature_dim: usize,
    sigma: f64,
    seed: u64,
    /// `D/2 x input_dim`, row `i` is `u_i`.
    frequencies: Arc<DMatrix<f64>>,
    output_scale: f64,
}

impl FourierFeatureMap {
    /// Draws the frequencies. Pure in `(input_dim, feature_dim, sigma, seed)`.
    pub fn sample(input_dim: usize, feature_dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidDimension("input_dim must be at least 1".into()));
        }
        if feature_dim < 2 || !feature_dim.is_multiple_of(2) {
            return Err(Error::InvalidDimension(format!("feature_dim must be even and >= 2, got {feature_dim}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked above");
        let mut r = rng::stream(seed, "fourier-frequencies");
        let half = feature_dim / 2;
        // Row-major fill so the draw order does not depend on nalgebra's layout.
        let draws: Vec<f64> = (0..half * input_dim).map(|_| normal.sample(&mut r)).collect();
        let frequencies = DMatrix::from_row_slice(half, input_dim, &draws);
        Ok(Self { input_dim, feature_dim, sigma, seed, frequencies: Arc::new(frequencies), output_scale: 1.0 })
    }

    /// `sample(input_dim, DEFAULT_FEATURE_DIM, 1.0, seed)`.
    pub fn with_defaults(input_dim: usize, seed: u64) -> Result<Self> {
        Self::sample(input_dim, DEFAULT_FEATURE_DIM, 1.0, seed)
    }

    /// Same frequencies, every feature multiplied by `gamma`.
    pub fn scaled(&self, gamma: f64) -> Self {
        Self { output_scale: self.output_scale * gamma, ..self.clone() }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::InvalidDimension(format!(
                "feature map expects dimension {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let norm_sq = x.norm_squared();
        if norm_sq.is_nan() || norm_sq > OVERFLOW_NORM_SQ {
            return Err(Error::OverflowGuard { norm_sq, limit: OVERFLOW_NORM_SQ });
        }
        Ok(norm_sq)
    }

    /// The feature vector `phi(x)` of length `D`.
    pub fn phi(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let norm_sq = self.check_input(x)?;
        let half = self.feature_dim / 2;
        let amplitude = self.output_scale * (norm_sq / 2.0).exp() / (self.feature_dim as f64).sqrt();
        let proj = &*self.frequencies * x;
        let mut out = DVector::zeros(self.feature_dim);
        for i in 0..half {
            let (s, c) = proj[i].sin_cos();
            out[i] = amplitude * s;
            out[half + i] = amplitude * c;
        }
        Ok(out)
    }

    /// `2 phi(x).phi(y)`, an estimate of `e^{x.y}` (exact for `x == y` at unit scale).
    pub fn exp_estimate(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(2.0 * self.phi(x)?.dot(&self.phi(y)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn deterministic_in_seed() {
        let a = FourierFeatureMap::sample(3, 128, 1.0, 7).unwrap();
        let b = FourierFeatureMap::sample(3, 128, 1.0, 7).unwrap();
        assert_eq!(*a.frequencies(), *b.frequencies());
        let c = FourierFeatureMap::sample(3, 128, 1.0, 8).unwrap();
        assert_ne!(*a.frequencies(), *c.frequencies());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(FourierFeatureMap::sample(3, 127, 1.0, 7), Err(Error::InvalidDimension(_))));
        assert!(matches!(FourierFeatureMap::sample(3, 0, 1.0, 7), Err(Error::InvalidDimension(_))));
        assert!(matches!(FourierFeatureMap::sample(0, 4, 1.0, 7), Err(Error::InvalidDimension(_))));
        assert!(matches!(FourierFeatureMap::sample(3, 4, 0.0, 7), Err(Error::InvalidParameter(_))));
        assert!(matches!(FourierFeatureMap::sample(3, 4, -1.0, 7), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn frequency_variance_matches_sigma() {
        let map = FourierFeatureMap::sample(2, 1024, 1.0, 42).unwrap();
        let f = map.frequencies();
        for col in 0..2 {
            let xs: Vec<f64> = f.column(col).iter().copied().collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 0.1, "coordinate {col}: variance {var}");
        }
    }

    #[test]
    fn phi_at_origin() {
        let map = FourierFeatureMap::sample(3, 4, 1.0, 1).unwrap();
        let p = map.phi(&v(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn phi_norm_identity() {
        let map = FourierFeatureMap::sample(2, 64, 1.0, 3).unwrap();
        let x = v(&[1.0, 1.0]);
        let n = map.phi(&x).unwrap().norm_squared();
        assert!((n - 2f64.exp() / 2.0).abs() < 1e-12 * n);
        assert!((2.0 * n - 7.38905609893065).abs() < 1e-10);
    }

    #[test]
    fn phi_matches_direct_formula() {
        let map = FourierFeatureMap::sample(4, 1024, 1.0, 42).unwrap();
        let x = v(&[0.3, -0.7, 0.2, 0.5]);
        let p = map.phi(&x).unwrap();
        let f = map.frequencies();
        let amp = (x.norm_squared() / 2.0).exp() / 32.0;
        for i in 0..512 {
            let mut dot = 0.0;
            for j in 0..4 {
                dot += f[(i, j)] * x[j];
            }
            assert!((p[i] - amp * dot.sin()).abs() < 1e-14);
            assert!((p[512 + i] - amp * dot.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn exp_estimate_exact_on_diagonal() {
        let map = FourierFeatureMap::sample(3, 16, 1.0, 9).unwrap();
        let zero = v(&[0.0, 0.0, 0.0]);
        assert_eq!(map.exp_estimate(&zero, &zero).unwrap(), 1.0);
        let x = v(&[0.6, 0.8, 0.0]);
        let e = map.exp_estimate(&x, &x).unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn exp_estimate_converges_over_seeds() {
        // x.y = 0.5 for unit vectors at 60 degrees.
        let x = v(&[1.0, 0.0]);
        let y = v(&[0.5, 3f64.sqrt() / 2.0]);
        let mean = (0..1000)
            .map(|s| FourierFeatureMap::sample(2, 1024, 1.0, s).unwrap().exp_estimate(&x, &y).unwrap())
            .sum::<f64>()
            / 1000.0;
        let target = 0.5f64.exp();
        assert!((mean - target).abs() < 0.05 * target, "mean {mean} vs {target}");
    }

    #[test]
    fn dimension_and_overflow_guards() {
        let map = FourierFeatureMap::sample(2, 4, 1.0, 1).unwrap();
        assert!(matches!(map.phi(&v(&[1.0])), Err(Error::InvalidDimension(_))));
        assert!(matches!(map.phi(&v(&[20.0, 20.0])), Err(Error::OverflowGuard { .. })));
        assert!(matches!(map.phi(&v(&[f64::NAN, 0.0])), Err(Error::OverflowGuard { .. })));
    }

    #[test]
    fn scaled_map_scales_features() {
        let map = FourierFeatureMap::sample(2, 8, 1.0, 5).unwrap();
        let x = v(&[0.2, -0.4]);
        let a = map.phi(&x).unwrap();
        let b = map.scaled(3.0).phi(&x).unwrap();
        assert!((b - a * 3.0).norm() < 1e-14);
    }
}
