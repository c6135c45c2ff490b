//! Per-feature batch normalization over the rows of a mini-batch.
//!
//! Train mode normalizes with the batch mean and population variance and folds
//! them into the running statistics as
//! `running = momentum * running + (1 - momentum) * batch`.
//! Infer mode normalizes with the running statistics only.

use ndarray::{Array1, Axis, Zip};

use super::{Matrix, Mode};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BnState {
    /// Identity-initialized state: gamma 1, beta 0, running statistics 0/1.
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Matrix,
    pub inv_std: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct BnGrads {
    pub input: Matrix,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub fn batchnorm_forward(x: &Matrix, bn: &mut BnState, mode: Mode) -> Result<(Matrix, BnCache)> {
    let (n, d) = x.dim();
    if d != bn.width() {
        return Err(Error::shape(format!(
            "batch norm width {} but input has {d} features",
            bn.width()
        )));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::config(format!(
                    "batch normalization needs at least 2 rows in train mode, got {n}"
                )));
            }
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let var = x.var_axis(Axis(0), 0.0);
            let m = bn.momentum;
            Zip::from(&mut bn.running_mean)
                .and(&mean)
                .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
            Zip::from(&mut bn.running_var)
                .and(&var)
                .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
            (mean, var)
        }
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.epsilon).sqrt());
    let xhat = (x - &mean) * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    Ok((y, BnCache { xhat, inv_std }))
}

/// Inference-mode normalization with the running statistics; never mutates state.
pub fn batchnorm_infer(x: &Matrix, bn: &BnState) -> Result<Matrix> {
    if x.ncols() != bn.width() {
        return Err(Error::shape(format!(
            "batch norm width {} but input has {} features",
            bn.width(),
            x.ncols()
        )));
    }
    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + bn.epsilon).sqrt());
    Ok((x - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta)
}

/// Backward pass through train-mode normalization, including the dependence
/// of the batch mean and variance on every input row.
pub fn batchnorm_backward(cache: &BnCache, gamma: &Array1<f64>, dy: &Matrix) -> Result<BnGrads> {
    if dy.dim() != cache.xhat.dim() {
        return Err(Error::shape(format!(
            "batch norm upstream gradient {:?} vs cached {:?}",
            dy.dim(),
            cache.xhat.dim()
        )));
    }
    let n = dy.nrows() as f64;
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut dx = dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
    dx *= &(&cache.inv_std / n);
    Ok(BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
