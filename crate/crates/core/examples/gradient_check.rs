//! Compare analytic autoencoder gradients with central finite differences.
//!
//! cargo run --release --example gradient_check

use rgmorph::dnnae::{one_hot, ArchSpec, DnnaeModel, GradProbe, LossSelector, Regularizer};
use rgmorph::neural::{grad_check, Matrix};
use rgmorph::{Label, RngStream};

fn main() -> rgmorph::Result<()> {
    let mut rng = RngStream::new(5, 0);
    let x = Matrix::from_shape_simple_fn((8, 16), || rng.uniform());
    let labels: Vec<Label> = (0..8).map(|i| Label::ALL[i % 2]).collect();
    for reg in [Regularizer::Bn, Regularizer::None] {
        let arch = ArchSpec {
            input_side: 4,
            ..ArchSpec::symmetric(vec![8], 4, reg)
        };
        for selector in [LossSelector::Mse, LossSelector::Ce, LossSelector::Combined] {
            let mut probe = GradProbe {
                model: DnnaeModel::new(arch.clone(), 3)?,
                input: x.clone(),
                onehot: one_hot(&labels, 2),
                selector,
                seed: 0,
            };
            let err = grad_check(&mut probe)?;
            println!("{reg:?} {selector:?}: max relative error {err:.3e}");
        }
    }
    Ok(())
}
