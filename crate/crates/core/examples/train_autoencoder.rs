//! Train a reduced autoencoder on synthetic data, checkpoint halfway and
//! resume, then report test losses per class.
//!
//! cargo run --release --example train_autoencoder

use rgmorph::datapipe::{synth_dataset, Split};
use rgmorph::dnnae::{evaluate, train, ArchSpec, DnnaeModel, Regularizer, TrainConfig};
use rgmorph::persistence::{load_checkpoint, save_checkpoint};

fn main() -> rgmorph::Result<()> {
    let ds = synth_dataset((150, 40, 40), 11);
    let (tr, va, te) = (
        ds.subset(&[Split::Train]),
        ds.subset(&[Split::Val]),
        ds.subset(&[Split::Test]),
    );
    let arch = ArchSpec::symmetric(vec![256, 128], 32, Regularizer::Bn);
    println!("{} trainable parameters", arch.param_count());
    let mut model = DnnaeModel::new(arch, 11)?;
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 50,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut history = train(&mut model, &tr, &va, &cfg)?;

    let path = std::env::temp_dir().join("train_autoencoder_example.dnae");
    save_checkpoint(&path, &model, true)?;
    let mut model = load_checkpoint(&path)?;
    let resume = TrainConfig {
        start_epoch: 10,
        ..cfg
    };
    history.extend(train(&mut model, &tr, &va, &resume)?);
    for m in &history {
        println!(
            "epoch {:2} lr {:.2e}: train mse {:7.3} ce {:.4} | val mse {:7.3} ce {:.4}",
            m.epoch, m.lr, m.train_mse, m.train_ce, m.val_mse, m.val_ce
        );
    }
    let r = evaluate(&model, &te)?;
    println!(
        "test: mse {:.3} ce {:.4} accuracy {:.3} per class {:?}",
        r.mse, r.ce, r.accuracy, r.per_class_mse
    );
    Ok(())
}
