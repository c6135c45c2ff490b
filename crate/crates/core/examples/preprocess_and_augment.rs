//! Background clipping, cropping, normalization and augmentation of one
//! cutout, then the record counts augmentation produces for a full sample.
//!
//! cargo run --release --example preprocess_and_augment

use rgmorph::datapipe::{
    augment_with, center_crop, dataset_plan, minmax_normalize, sigma_clip, split_counts,
    AugFactors, Flip, Image, SigmaClip, Split,
};
use rgmorph::{Label, RngStream};

fn summary(name: &str, img: &Image) {
    let nonzero = img.iter().filter(|&&v| v > 0.0).count();
    let max = img.iter().copied().fold(f64::MIN, f64::max);
    println!(
        "{name:<12} {:?}  non-zero {nonzero:5}  max {max:.4}",
        img.dim()
    );
}

fn main() -> rgmorph::Result<()> {
    // a 150x150 noisy field with an elongated source in the middle
    let mut rng = RngStream::new(1, 0);
    let raw = Image::from_shape_fn((150, 150), |(r, c)| {
        let (x, y) = (c as f64 - 74.5, r as f64 - 74.5);
        let source = 5.0 * (-(x * x / 60.0 + y * y / 8.0)).exp();
        source + 0.2 + 0.05 * rng.normal()
    });
    summary("raw", &raw);
    let clipped = sigma_clip(&raw, SigmaClip::default());
    summary("clipped", &clipped);
    let cropped = center_crop(&clipped, 40)?;
    summary("cropped", &cropped);
    let norm = minmax_normalize(&cropped);
    summary("normalized", &norm);
    for flip in Flip::ALL {
        for deg in [0.0, 45.0, 90.0] {
            let aug = augment_with(&norm, flip, deg);
            println!("  {flip:?} + {deg:>4}°: total intensity {:.2}", aug.sum());
        }
    }

    let labels: Vec<Label> = (0..291)
        .map(|i| if i < 192 { Label::Fri } else { Label::Frii })
        .collect();
    let plan = dataset_plan(
        &labels,
        AugFactors {
            fri: 200,
            frii: 400,
        },
        0,
    )?;
    for label in Label::ALL {
        let n = labels.iter().filter(|&&l| l == label).count();
        let count = |s: Split| {
            plan.iter()
                .filter(|r| labels[r.0] == label && r.1 == s)
                .count()
        };
        println!(
            "{label}: {n} sources, split {:?}, stored train {} val {} test {}",
            split_counts(n),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test)
        );
    }
    Ok(())
}
