//! Draw synthetic FRI and FRII sources and write them as 16-bit PGMs.
//!
//! cargo run --release --example synth_galaxies -- [out_dir]

use std::path::PathBuf;

use rgmorph::datapipe::{local_maxima, synth_galaxy, Image};
use rgmorph::persistence::export_pgm;
use rgmorph::{Label, RngStream, IMAGE_SIDE};

fn main() -> rgmorph::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synth_out".into())
        .into();
    std::fs::create_dir_all(&out).map_err(|e| rgmorph::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let mut rng = RngStream::new(2024, 0);
    for label in Label::ALL {
        for i in 0..4 {
            let s = synth_galaxy(label, &mut rng);
            let img = Image::from_shape_vec(
                (IMAGE_SIDE, IMAGE_SIDE),
                s.pixels.iter().map(|&v| v as f64).collect(),
            )
            .expect("40x40");
            let peaks = local_maxima(&img);
            let bright: Vec<_> = peaks.iter().filter(|&&(r, c)| img[[r, c]] > 0.5).collect();
            println!("{label:>4} #{i}: bright peaks at {bright:?}");
            export_pgm(
                &img,
                &out.join(format!("{}_{i}.pgm", label.name().to_lowercase())),
            )?;
        }
    }
    println!("images written to {}", out.display());
    Ok(())
}
