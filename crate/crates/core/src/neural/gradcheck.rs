//! Central finite-difference gradient checker.

use crate::error::Result;

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// A model with a scalar loss whose parameters can be perturbed one at a time.
///
/// `loss` must be a pure function of the current parameters: any stochastic
/// layer has to reuse the same draws on every call.
pub trait GradCheckable {
    /// Sizes of the parameter blocks, in the order `analytic_grads` reports them.
    fn block_sizes(&self) -> Vec<usize>;
    fn param_mut(&mut self, block: usize, index: usize) -> &mut f64;
    fn loss(&mut self) -> Result<f64>;
    fn analytic_grads(&mut self) -> Result<Vec<Vec<f64>>>;
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter.
pub fn grad_check<N: GradCheckable>(net: &mut N) -> Result<f64> {
    let analytic = net.analytic_grads()?;
    let sizes = net.block_sizes();
    let h = GRAD_CHECK_STEP;
    let mut worst = 0.0f64;
    for (block, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = *net.param_mut(block, i);
            *net.param_mut(block, i) = orig + h;
            let up = net.loss()?;
            *net.param_mut(block, i) = orig - h;
            let down = net.loss()?;
            *net.param_mut(block, i) = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[block][i], numeric));
        }
    }
    Ok(worst)
}
