//! Fit a three-component mixture with EM, print the likelihood trace and
//! compare sample statistics with the fitted parameters.
//!
//! cargo run --release --example fit_mixture

use rgmorph::gmm::{em_fit, gmm_sample, match_components, CovType, EmOptions};
use rgmorph::neural::Matrix;
use rgmorph::RngStream;

fn main() -> rgmorph::Result<()> {
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let mut rng = RngStream::new(7, 0);
    let x = Matrix::from_shape_fn((3000, 2), |(i, j)| centers[i / 1000][j] + rng.normal());
    let fit = em_fit(
        &x,
        3,
        &EmOptions {
            seed: 1,
            cov_type: CovType::Full,
            ..EmOptions::default()
        },
    )?;
    println!(
        "{} iterations, converged {}; mean log-likelihood trace:",
        fit.iterations, fit.converged
    );
    for (i, ll) in fit.log_lik_trace.iter().enumerate() {
        println!("  {i:3}: {ll:.6}");
    }
    let truth = Matrix::from_shape_vec((3, 2), centers.concat()).expect("3x2");
    let g = &fit.model;
    for (t, &f) in match_components(&truth, &g.means).iter().enumerate() {
        println!(
            "component near {:?}: weight {:.4}, mean ({:.3}, {:.3})",
            centers[t],
            g.weights[f],
            g.means[[f, 0]],
            g.means[[f, 1]]
        );
    }
    let samples = gmm_sample(g, 10_000, &mut RngStream::new(9, 0))?;
    let ll = g.log_density(&samples)?;
    println!(
        "mean log-density of 10000 fresh samples: {:.4}",
        ll.iter().sum::<f64>() / ll.len() as f64
    );
    Ok(())
}
