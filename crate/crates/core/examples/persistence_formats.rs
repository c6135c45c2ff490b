//! Round-trip every on-disk format and show how corrupt files are rejected.
//!
//! cargo run --release --example persistence_formats

use rgmorph::datapipe::synth_dataset;
use rgmorph::dnnae::{ArchSpec, DnnaeModel, Regularizer};
use rgmorph::gmm::{em_fit, EmOptions};
use rgmorph::neural::Matrix;
use rgmorph::persistence::*;
use rgmorph::RngStream;

fn main() -> rgmorph::Result<()> {
    let ds = synth_dataset((3, 1, 1), 0);
    let bytes = encode_dataset(&ds)?;
    println!(
        "dataset: {} records, {} bytes, round trip exact: {}",
        ds.len(),
        bytes.len(),
        decode_dataset(&bytes)? == ds
    );

    let model = DnnaeModel::new(ArchSpec::symmetric(vec![64], 8, Regularizer::Bn), 0)?;
    let with = encode_checkpoint(&model, true);
    let without = encode_checkpoint(&model, false);
    println!(
        "checkpoint: {} bytes with optimizer state, {} without; re-encoding identical: {}",
        with.len(),
        without.len(),
        encode_checkpoint(&decode_checkpoint(&with)?, true) == with
    );

    let mut rng = RngStream::new(1, 0);
    let x = Matrix::from_shape_simple_fn((100, 3), || rng.normal());
    let g = em_fit(&x, 3, &EmOptions::default())?.model;
    let gb = encode_gmm(&g);
    println!(
        "mixture: {} bytes, round trip exact: {}",
        gb.len(),
        encode_gmm(&decode_gmm(&gb)?) == gb
    );

    println!(
        "pgm: 0.5 -> {}, 1.0 -> {}",
        quantize16(0.5),
        quantize16(1.0)
    );

    match decode_checkpoint(&with[..with.len() - 10]) {
        Err(e) => println!("truncated checkpoint: {e}"),
        Ok(_) => unreachable!("truncated input must fail"),
    }
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    if let Err(e) = decode_dataset(&bad) {
        println!("wrong magic: {e}");
    }
    Ok(())
}
