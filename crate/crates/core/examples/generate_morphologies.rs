//! Train on synthetic data, fit per-class mixtures on the codes and decode
//! new samples of each class into PGM images.
//!
//! cargo run --release --example generate_morphologies -- [out_dir]

use std::path::PathBuf;

use rgmorph::cli::generate_images;
use rgmorph::datapipe::{synth_dataset, Split};
use rgmorph::dnnae::{train, ArchSpec, DnnaeModel, Regularizer, TrainConfig};
use rgmorph::gmm::{em_fit, EmOptions};
use rgmorph::persistence::export_pgm;
use rgmorph::{Label, RngStream};

fn main() -> rgmorph::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "generated".into())
        .into();
    std::fs::create_dir_all(&out).map_err(|e| rgmorph::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let ds = synth_dataset((200, 50, 0), 3);
    let (tr, va) = (ds.subset(&[Split::Train]), ds.subset(&[Split::Val]));
    let mut model = DnnaeModel::new(
        ArchSpec::symmetric(vec![256, 128, 128], 32, Regularizer::Bn),
        3,
    )?;
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 50,
        seed: 3,
        ..TrainConfig::default()
    };
    train(&mut model, &tr, &va, &cfg)?;
    for label in Label::ALL {
        let set = ds.select(|s| s.split == Split::Train && s.label == label);
        let codes = model.encode(&set.pixels)?;
        let gmm = em_fit(
            &codes,
            3,
            &EmOptions {
                seed: 3,
                ..EmOptions::default()
            },
        )?
        .model;
        let mut rng = RngStream::for_parts(3, &[label.index() as u64]);
        let images = generate_images(&model, &gmm, 6, &mut rng)?;
        // the decoded samples should look like their class to the head
        let probs = model
            .infer(
                &ndarray::stack(
                    ndarray::Axis(0),
                    &images
                        .iter()
                        .map(|i| i.view().into_shape_with_order(1600).expect("flat"))
                        .collect::<Vec<_>>(),
                )
                .expect("same length"),
            )?
            .1;
        let agree = probs
            .rows()
            .into_iter()
            .filter(|p| p[label.index()] > 0.5)
            .count();
        println!(
            "{label}: mixture weights {:?}, head agrees on {agree}/6",
            gmm.weights
        );
        for (i, img) in images.iter().enumerate() {
            export_pgm(
                img,
                &out.join(format!("{}_{i}.pgm", label.name().to_lowercase())),
            )?;
        }
    }
    println!("images written to {}", out.display());
    Ok(())
}
