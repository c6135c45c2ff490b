//! Desk-scale end to end: synthetic data, autoencoder training, per-class
//! mixtures on the codes, and a generated batch of images.
//!
//! cargo run --release --example desk_pipeline

use std::time::Instant;

use rgmorph::datapipe::{synth_dataset, Split};
use rgmorph::dnnae::{evaluate, train_with, ArchSpec, DnnaeModel, Regularizer, TrainConfig};
use rgmorph::gmm::{em_fit, EmOptions};
use rgmorph::Label;

fn main() -> rgmorph::Result<()> {
    let ds = synth_dataset((200, 50, 50), 42);
    let train = ds.subset(&[Split::Train]);
    let val = ds.subset(&[Split::Val]);
    let test = ds.subset(&[Split::Test]);

    let arch = ArchSpec::symmetric(vec![256, 128, 128], 32, Regularizer::Bn);
    let mut model = DnnaeModel::new(arch, 42)?;
    let before = evaluate(&model, &test)?;
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 50,
        seed: 42,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    train_with(&mut model, &train, &val, &cfg, |_, m| {
        println!(
            "epoch {:2}  train mse {:8.3}  ce {:.4}  val mse {:8.3}  ce {:.4}",
            m.epoch, m.train_mse, m.train_ce, m.val_mse, m.val_ce
        );
        Ok(())
    })?;
    let after = evaluate(&model, &test)?;
    println!(
        "test mse {:.3} -> {:.3} (ratio {:.3}), accuracy {:.3}, {:.1}s",
        before.mse,
        after.mse,
        after.mse / before.mse,
        after.accuracy,
        t0.elapsed().as_secs_f64()
    );

    let mut gmms = Vec::new();
    for label in Label::ALL {
        let set = ds.select(|s| s.split == Split::Train && s.label == label);
        let codes = model.encode(&set.pixels)?;
        gmms.push(
            em_fit(
                &codes,
                3,
                &EmOptions {
                    seed: 1,
                    ..EmOptions::default()
                },
            )?
            .model,
        );
    }
    let codes = model.encode(&test.pixels)?;
    let own = |g: usize| gmms[g].log_density(&codes);
    let (d0, d1) = (own(0)?, own(1)?);
    let correct = test
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, l)| (d0[i] > d1[i]) == (*l == Label::Fri))
        .count();
    println!(
        "code separability: {:.3}",
        correct as f64 / test.len() as f64
    );
    Ok(())
}
