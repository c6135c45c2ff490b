//! Dense-network engine: affine layers with optional batch normalization,
//! activations, inverted dropout, Adam and a finite-difference gradient checker.
//!
//! Everything operates on `f64` matrices in row-major (standard) layout with
//! one sample per row.

mod adam;
mod batchnorm;
mod dropout;
mod gradcheck;
mod layer;
mod schedule;

pub use adam::{adam_update, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, BnCache, BnGrads, BnState,
};
pub use batchnorm::{BN_EPSILON, BN_MOMENTUM};
pub use dropout::{dropout_backward, dropout_forward};
pub use gradcheck::{grad_check, relative_error, GradCheckable, GRAD_CHECK_STEP};
pub use layer::{
    dense_forward, dense_infer, layer_backward, Activation, DenseCache, DenseLayer, ParamGrads,
};
pub use schedule::{lr_schedule, LR_DECAY, LR_INITIAL};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Row-major matrix of `f64`, one sample per row.
pub type Matrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite values in {what}")))
    }
}
