//! Image preprocessing, augmentation, stratified splitting and a synthetic
//! FRI/FRII source generator.
//!
//! Raw images go through sigma clipping, a centered 40×40 crop and min-max
//! scaling; train and validation images are then replicated through random
//! flips and rotations. Test images are never augmented.

mod augment;
mod dataset;
mod preprocess;
mod split;
mod synth;

pub use augment::{augment, augment_with, rotate_bilinear, Flip};
pub use dataset::{build_dataset, dataset_plan, preprocess, AugFactors, Dataset, Sample, Split};
pub use preprocess::{center_crop, minmax_normalize, sigma_clip, SigmaClip};
pub use split::{split_counts, stratified_split};
pub use synth::{local_maxima, synth_dataset, synth_galaxy, synth_raw, SynthParams};

use ndarray::Array2;

/// Row-major image, `height × width`.
pub type Image = Array2<f64>;
