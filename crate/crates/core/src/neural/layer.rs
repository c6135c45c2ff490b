use ndarray::{Array1, Axis};

use super::batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_infer, BnCache, BnState};
use super::{ensure_finite, Matrix, Mode};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    None,
}

impl Activation {
    pub fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::None => z.clone(),
            Activation::Softmax => {
                let mut out = z.clone();
                for mut row in out.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                out
            }
        }
    }

    /// Gradient w.r.t. the pre-activation given the activation output `a`
    /// and the pre-activation `z`.
    fn backward(self, z: &Matrix, a: &Matrix, da: &Matrix) -> Matrix {
        match self {
            Activation::Relu => {
                let mut dz = da.clone();
                dz.zip_mut_with(z, |g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0
                    }
                });
                dz
            }
            Activation::Sigmoid => da * &a.mapv(|s| s * (1.0 - s)),
            Activation::None => da.clone(),
            Activation::Softmax => {
                let dot = (da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                a * &(da - &dot)
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer: `activation(bn(x Wᵀ + b))`, batch norm optional.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub bn: Option<BnState>,
}

impl DenseLayer {
    /// Zero weights and biases.
    pub fn zeros(input: usize, output: usize, activation: Activation, with_bn: bool) -> Self {
        Self {
            weights: Matrix::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
            bn: with_bn.then(|| BnState::new(output)),
        }
    }

    /// Gaussian weights with std `sqrt(2/fan_in)` for ReLU layers and
    /// `sqrt(1/fan_in)` otherwise; zero biases.
    pub fn init(
        input: usize,
        output: usize,
        activation: Activation,
        with_bn: bool,
        rng: &mut RngStream,
    ) -> Self {
        let gain = if activation == Activation::Relu {
            2.0
        } else {
            1.0
        };
        let std = (gain / input as f64).sqrt();
        let mut layer = Self::zeros(input, output, activation, with_bn);
        layer.weights.mapv_inplace(|_| rng.normal() * std);
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn has_bn(&self) -> bool {
        self.bn.is_some()
    }

    /// Trainable scalars: weights, then bias or (with BN) gamma and beta.
    ///
    /// With BN the affine bias is cancelled by the mean subtraction, so it stays
    /// at zero and is not trained; beta carries the shift.
    pub fn param_count(&self) -> usize {
        self.weights.len()
            + match &self.bn {
                Some(b) => 2 * b.width(),
                None => self.bias.len(),
            }
    }

    /// Trainable parameter blocks in canonical order: weights, then bias or gamma, beta.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.weights.as_slice_mut().expect("standard layout")];
        match self.bn.as_mut() {
            Some(bn) => {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
            None => out.push(self.bias.as_slice_mut().expect("standard layout")),
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.weights.as_slice().expect("standard layout")];
        match self.bn.as_ref() {
            Some(bn) => {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
            None => out.push(self.bias.as_slice().expect("standard layout")),
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    pub input: Matrix,
    /// Affine output `x Wᵀ + b`.
    pub pre: Matrix,
    pub bn: Option<BnCache>,
    /// Input to the activation (BN output when present, else `pre`).
    pub act_in: Matrix,
    pub output: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weights: Matrix,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl ParamGrads {
    /// Gradient blocks in the same order as [`DenseLayer::params_mut`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.weights.as_slice().expect("standard layout")];
        match (&self.gamma, &self.beta) {
            (Some(g), Some(b)) => {
                out.push(g.as_slice().expect("standard layout"));
                out.push(b.as_slice().expect("standard layout"));
            }
            _ => out.push(self.bias.as_slice().expect("standard layout")),
        }
        out
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.weights += &other.weights;
        self.bias += &other.bias;
        if let (Some(g), Some(og)) = (self.gamma.as_mut(), other.gamma.as_ref()) {
            *g += og;
        }
        if let (Some(b), Some(ob)) = (self.beta.as_mut(), other.beta.as_ref()) {
            *b += ob;
        }
    }
}

pub fn dense_forward(
    x: &Matrix,
    layer: &mut DenseLayer,
    mode: Mode,
) -> Result<(Matrix, DenseCache)> {
    if x.ncols() != layer.input_dim() {
        return Err(Error::shape(format!(
            "layer expects {} inputs, got {}",
            layer.input_dim(),
            x.ncols()
        )));
    }
    ensure_finite(x, "layer input")?;
    let pre = x.dot(&layer.weights.t()) + &layer.bias;
    let (act_in, bn_cache) = match layer.bn.as_mut() {
        Some(bn) => {
            let (y, c) = batchnorm_forward(&pre, bn, mode)?;
            (y, Some(c))
        }
        None => (pre.clone(), None),
    };
    let output = layer.activation.apply(&act_in);
    ensure_finite(&output, "layer output")?;
    let cache = DenseCache {
        input: x.clone(),
        pre,
        bn: bn_cache,
        act_in,
        output: output.clone(),
    };
    Ok((output, cache))
}

/// Inference-mode forward that leaves the layer untouched.
pub fn dense_infer(x: &Matrix, layer: &DenseLayer) -> Result<Matrix> {
    if x.ncols() != layer.input_dim() {
        return Err(Error::shape(format!(
            "layer expects {} inputs, got {}",
            layer.input_dim(),
            x.ncols()
        )));
    }
    let pre = x.dot(&layer.weights.t()) + &layer.bias;
    let act_in = match layer.bn.as_ref() {
        Some(bn) => batchnorm_infer(&pre, bn)?,
        None => pre,
    };
    let output = layer.activation.apply(&act_in);
    ensure_finite(&output, "layer output")?;
    Ok(output)
}

/// Exact gradients of a layer's output w.r.t. its input and parameters.
/// The cache must come from a train-mode forward when the layer has BN.
pub fn layer_backward(
    layer: &DenseLayer,
    cache: &DenseCache,
    upstream: &Matrix,
) -> Result<(Matrix, ParamGrads)> {
    if upstream.dim() != cache.output.dim() {
        return Err(Error::shape(format!(
            "upstream gradient {:?} vs layer output {:?}",
            upstream.dim(),
            cache.output.dim()
        )));
    }
    let d_act_in = layer
        .activation
        .backward(&cache.act_in, &cache.output, upstream);
    let (dpre, gamma, beta) = match (&layer.bn, &cache.bn) {
        (Some(bn), Some(bc)) => {
            let g = batchnorm_backward(bc, &bn.gamma, &d_act_in)?;
            (g.input, Some(g.gamma), Some(g.beta))
        }
        (None, None) => (d_act_in, None, None),
        _ => return Err(Error::shape("layer/cache batch-norm presence differs")),
    };
    let weights = dpre.t().dot(&cache.input);
    let bias = dpre.sum_axis(Axis(0));
    let input_grad = dpre.dot(&layer.weights);
    Ok((
        input_grad,
        ParamGrads {
            weights,
            bias,
            gamma,
            beta,
        },
    ))
}
