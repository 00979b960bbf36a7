//! Rotary positional encoding.
//!
//! `R_m` is block diagonal with 2x2 rotations by `m * base^{-2j/d}` for block
//! `j`; an odd trailing coordinate is left fixed. `R_m^T R_n = R_{n-m}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

fn block_angle(offset: f64, block: usize, dim: usize, base: f64) -> f64 {
    offset * base.powf(-2.0 * block as f64 / dim as f64)
}

fn check(dim: usize, base: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidDimension("rope dimension must be at least 1".into()));
    }
    if !(base > 1.0 && base.is_finite()) {
        return Err(Error::InvalidParameter(format!("rope base must exceed 1, got {base}")));
    }
    Ok(())
}

/// Rotation for a signed offset; negative offsets give the inverse rotation.
pub fn rotation(offset: i64, dim: usize, base: f64) -> Result<DMatrix<f64>> {
    check(dim, base)?;
    let mut r = DMatrix::identity(dim, dim);
    for j in 0..dim / 2 {
        let (s, c) = block_angle(offset as f64, j, dim, base).sin_cos();
        let (a, b) = (2 * j, 2 * j + 1);
        r[(a, a)] = c;
        r[(a, b)] = -s;
        r[(b, a)] = s;
        r[(b, b)] = c;
    }
    Ok(r)
}

/// `R_position` as a dense matrix.
pub fn rope(position: i64, dim: usize, base: f64) -> Result<DMatrix<f64>> {
    if position < 0 {
        return Err(Error::InvalidParameter(format!("rope position must be >= 0, got {position}")));
    }
    rotation(position, dim, base)
}

/// `R_position * x` without materializing the matrix.
pub fn apply_rope(position: usize, x: &DVector<f64>, base: f64) -> Result<DVector<f64>> {
    let dim = x.len();
    check(dim, base)?;
    let mut out = x.clone();
    for j in 0..dim / 2 {
        let (s, c) = block_angle(position as f64, j, dim, base).sin_cos();
        let (a, b) = (x[2 * j], x[2 * j + 1]);
        out[2 * j] = c * a - s * b;
        out[2 * j + 1] = s * a + c * b;
    }
    Ok(out)
}
