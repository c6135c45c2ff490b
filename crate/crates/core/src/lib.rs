//! Radio galaxy morphology generation.
//!
//! A dense autoencoder compresses 40×40 radio galaxy cutouts into short
//! non-negative codes while a softmax head on the code keeps the two
//! Fanaroff-Riley classes apart. Per-class three-component Gaussian mixtures
//! fitted to those codes are sampled and decoded into new FRI/FRII images.
//!
//! Modules, bottom-up:
//! - [`neural`]: dense layers, batch normalization, dropout, Adam, gradient checks
//! - [`dnnae`]: the autoencoder, its two losses and the alternating training loop
//! - [`gmm`]: Gaussian mixture densities, EM fitting and sampling
//! - [`datapipe`]: sigma clipping, cropping, augmentation, splits, synthetic galaxies
//! - [`persistence`]: binary dataset, checkpoint and mixture files; PGM I/O
//! - [`cli`]: the `rgmorph` command line

// NaN-rejecting `!(x > 0.0)` checks and index loops are intentional in the numeric code.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod datapipe;
pub mod dnnae;
pub mod error;
pub mod gmm;
pub mod neural;
pub mod persistence;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RngStream;

/// Image side length in pixels.
pub const IMAGE_SIDE: usize = 40;

/// Fanaroff-Riley class of a source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Fri = 0,
    Frii = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Fri, Label::Frii];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Label> {
        match i {
            0 => Some(Label::Fri),
            1 => Some(Label::Frii),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Fri => "FRI",
            Label::Frii => "FRII",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FRI" | "0" => Ok(Label::Fri),
            "FRII" | "1" => Ok(Label::Frii),
            other => Err(Error::validation(format!("unknown class label {other:?}"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
