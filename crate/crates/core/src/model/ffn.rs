//! Feed-forward block and the single-layer transformer forward.
//!
//! `x^ = W_FFN1 act(W_FFN2 h + b_FFN2) + b_FFN1`, where `W_FFN2: d_o -> d_h`
//! and `W_FFN1: d_h -> d_o`. Freezing `act` at a given `h` as the diagonal
//! `Sigma_act` makes the block affine in `h`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::attention::{attend, AttentionMode, AttentionParams, KeyWindow, LayerInputs};
use crate::model::sequence::SegmentedSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    /// `d_o x d_h`
    pub w1: DMatrix<f64>,
    /// `d_o`
    pub b1: DVector<f64>,
    /// `d_h x d_o`
    pub w2: DMatrix<f64>,
    /// `d_h`
    pub b2: DVector<f64>,
    pub activation: Activation,
}

impl FfnParams {
    pub fn new(
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let (d_o, d_h) = w1.shape();
        if b1.len() != d_o || w2.shape() != (d_h, d_o) || b2.len() != d_h {
            return Err(Error::InvalidDimension(format!(
                "ffn shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2, activation })
    }

    /// Zero weights and biases.
    pub fn zeros(d_o: usize, d_h: usize, activation: Activation) -> Self {
        Self {
            w1: DMatrix::zeros(d_o, d_h),
            b1: DVector::zeros(d_o),
            w2: DMatrix::zeros(d_h, d_o),
            b2: DVector::zeros(d_h),
            activation,
        }
    }

    pub fn d_out(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn preactivation(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.w2 * h + &self.b2
    }

    /// `W1 act(W2 h + b2) + b1`, using the activation function directly.
    pub fn apply(&self, h: &DVector<f64>) -> DVector<f64> {
        let z = self.preactivation(h).map(|z| self.activation.apply(z));
        &self.w1 * z + &self.b1
    }

    /// `W1 [Sigma (W2 h + b2)] + b1` with a frozen `Sigma`.
    pub fn apply_frozen(&self, sigma: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
        &self.w1 * (sigma * self.preactivation(h)) + &self.b1
    }
}

/// Diagonal `Sigma_act` with `Sigma_act z = act(z)` at `z = W2 h + b2`.
pub fn freeze_sigma(ffn: &FfnParams, h: &DVector<f64>) -> DMatrix<f64> {
    let d_h = ffn.d_hidden();
    match ffn.activation {
        Activation::Identity => DMatrix::identity(d_h, d_h),
        Activation::Relu => {
            let z = ffn.preactivation(h);
            DMatrix::from_diagonal(&z.map(|zj| if zj > 0.0 { 1.0 } else { 0.0 }))
        }
    }
}

/// One attention + FFN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub attention: AttentionParams,
    pub ffn: FfnParams,
}

impl Layer {
    pub fn new(attention: AttentionParams, ffn: FfnParams) -> Result<Self> {
        if ffn.d_out() != attention.d_out() {
            return Err(Error::InvalidDimension(format!(
                "ffn operates on dimension {}, attention outputs {}",
                ffn.d_out(),
                attention.d_out()
            )));
        }
        Ok(Self { attention, ffn })
    }

    pub(crate) fn forward_inputs(
        &self,
        mode: &AttentionMode,
        inputs: LayerInputs<'_>,
        query_pos: usize,
        window: KeyWindow,
    ) -> Result<DVector<f64>> {
        let h = attend(&self.attention, mode, inputs, query_pos, window)?;
        let sigma = freeze_sigma(&self.ffn, &h);
        Ok(self.ffn.apply_frozen(&sigma, &h))
    }
}

/// Single-layer transformer output at `query_pos`, with `Sigma_act` frozen
/// at that position's attention output.
pub fn layer_forward(
    params: &AttentionParams,
    ffn: &FfnParams,
    mode: &AttentionMode,
    seq: &SegmentedSequence,
    query_pos: usize,
) -> Result<DVector<f64>> {
    let h = attend(params, mode, LayerInputs::of(seq), query_pos, KeyWindow::Preceding)?;
    if ffn.d_out() != h.len() {
        return Err(Error::InvalidDimension(format!("ffn expects {}, attention gave {}", ffn.d_out(), h.len())));
    }
    let sigma = freeze_sigma(ffn, &h);
    Ok(ffn.apply_frozen(&sigma, &h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelmap::FourierFeatureMap;
    use crate::testkit::{random_attention, random_ffn, random_sequence, random_vector};

    #[test]
    fn sigma_extremes() {
        let mut ffn = random_ffn(1, 3, 4, Activation::Relu);
        ffn.w2 = DMatrix::zeros(4, 3);
        ffn.b2 = DVector::from_element(4, 1.0);
        let h = random_vector(1, "h", 3, 1.0);
        assert_eq!(freeze_sigma(&ffn, &h), DMatrix::identity(4, 4));
        ffn.b2 = DVector::from_element(4, -1.0);
        assert_eq!(freeze_sigma(&ffn, &h), DMatrix::zeros(4, 4));
        ffn.b2 = DVector::zeros(4);
        // z_j = 0 maps to 0
        assert_eq!(freeze_sigma(&ffn, &h), DMatrix::zeros(4, 4));
        ffn.activation = Activation::Identity;
        assert_eq!(freeze_sigma(&ffn, &h), DMatrix::identity(4, 4));
    }

    #[test]
    fn sigma_reproduces_relu() {
        let ffn = random_ffn(5, 6, 16, Activation::Relu);
        let h = random_vector(5, "h", 6, 2.0);
        let z = ffn.preactivation(&h);
        assert!(z.iter().any(|v| *v > 0.0) && z.iter().any(|v| *v < 0.0));
        let frozen = freeze_sigma(&ffn, &h) * &z;
        for j in 0..16 {
            assert_eq!(frozen[j], z[j].max(0.0));
        }
    }

    #[test]
    fn layer_forward_cases() {
        let attn = random_attention(9, 5, 4);
        let map = FourierFeatureMap::sample(4, 128, 1.0, 9).unwrap();
        let mode = AttentionMode::Kernel(map.clone());
        let seq = random_sequence(9, 5, 6, 4, 2);
        let p = seq.len();

        let zero = FfnParams { b1: random_vector(9, "b1", 4, 1.0), ..FfnParams::zeros(4, 7, Activation::Relu) };
        assert_eq!(layer_forward(&attn, &zero, &mode, &seq, p).unwrap(), zero.b1);

        let lin =
            FfnParams { b1: DVector::zeros(4), b2: DVector::zeros(7), ..random_ffn(9, 4, 7, Activation::Identity) };
        let h = crate::model::attention::kernel_attention(&attn, &map, &seq, p).unwrap();
        let want = &lin.w1 * (&lin.w2 * &h);
        assert!((layer_forward(&attn, &lin, &mode, &seq, p).unwrap() - want).norm() < 1e-12);

        let ffn = random_ffn(9, 4, 7, Activation::Relu);
        let direct = ffn.apply(&h);
        let got = layer_forward(&attn, &ffn, &mode, &seq, p).unwrap();
        assert!((got - direct).norm() <= 1e-12 * (1.0 + h.norm()));
    }
}
