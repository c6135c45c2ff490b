use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Moment estimates for one parameter block. `m` and `v` are flattened over
/// every slice passed to [`adam_update`], in order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam step over a parameter block made of several slices.
///
/// Fails without touching anything if shapes disagree or a gradient is not finite.
pub fn adam_update(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    block: &str,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{block}: {} parameter slices but {} gradient slices",
            params.len(),
            grads.len()
        )));
    }
    let total: usize = params.iter().map(|p| p.len()).sum();
    if total != state.len() {
        return Err(Error::shape(format!(
            "{block}: optimizer state holds {} entries, parameters {total}",
            state.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "{block}: parameter slice {} vs gradient slice {}",
                p.len(),
                g.len()
            )));
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::numeric(format!("non-finite gradient in {block}")));
    }
    if !(lr > 0.0) {
        return Err(Error::config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut k = 0;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, &gi) in p.iter_mut().zip(g.iter()) {
            let m = b1 * state.m[k] + (1.0 - b1) * gi;
            let v = b2 * state.v[k] + (1.0 - b2) * gi * gi;
            state.m[k] = m;
            state.v[k] = v;
            *pi -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            k += 1;
        }
    }
    Ok(())
}
