use super::{Matrix, Mode};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Inverted dropout. Returns the output and the keep mask (1.0 kept, 0.0 dropped).
///
/// In infer mode, or with `keep_prob == 1`, the input passes through unchanged
/// and the mask is all ones.
pub fn dropout_forward(
    x: &Matrix,
    keep_prob: f64,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<(Matrix, Matrix)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::config(format!(
            "keep probability must be in (0, 1], got {keep_prob}"
        )));
    }
    if mode == Mode::Infer || keep_prob == 1.0 {
        return Ok((x.clone(), Matrix::ones(x.dim())));
    }
    let mask =
        Matrix::from_shape_simple_fn(x.dim(), || if rng.bernoulli(keep_prob) { 1.0 } else { 0.0 });
    let y = x * &mask / keep_prob;
    Ok((y, mask))
}

pub fn dropout_backward(mask: &Matrix, keep_prob: f64, dy: &Matrix) -> Matrix {
    dy * mask / keep_prob
}
