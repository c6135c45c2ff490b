use super::augment::augment;
use super::preprocess::{center_crop, minmax_normalize, sigma_clip, SigmaClip};
use super::split::stratified_split;
use super::Image;
use crate::dnnae::LabeledImages;
use crate::error::{Error, Result};
use crate::neural::Matrix;
use crate::rng::RngStream;
use crate::{Label, IMAGE_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub fn from_index(i: u8) -> Option<Split> {
        match i {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

/// One image record. Pixels are stored at rest precision, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f32>,
    pub label: Label,
    pub split: Split,
    pub origin_id: u32,
    /// 0 for the unaugmented image.
    pub aug_index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: u32,
    pub width: u32,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label, split: Split) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == label && s.split == split)
            .count()
    }

    /// Samples of the given splits, in file order, as an image matrix.
    pub fn subset(&self, splits: &[Split]) -> LabeledImages {
        self.select(|s| splits.contains(&s.split))
    }

    pub fn select(&self, keep: impl Fn(&Sample) -> bool) -> LabeledImages {
        let chosen: Vec<&Sample> = self.samples.iter().filter(|s| keep(s)).collect();
        let px = (self.height * self.width) as usize;
        let mut pixels = Matrix::zeros((chosen.len(), px));
        for (mut row, s) in pixels.rows_mut().into_iter().zip(&chosen) {
            for (d, &v) in row.iter_mut().zip(&s.pixels) {
                *d = v as f64;
            }
        }
        LabeledImages {
            pixels,
            labels: chosen.iter().map(|s| s.label).collect(),
        }
    }
}

/// Number of stored copies per source image, by class. Copy 0 is the
/// unaugmented image, so a factor of 1 means no augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugFactors {
    pub fri: u32,
    pub frii: u32,
}

impl AugFactors {
    pub const NONE: AugFactors = AugFactors { fri: 1, frii: 1 };

    pub fn get(&self, label: Label) -> u32 {
        match label {
            Label::Fri => self.fri,
            Label::Frii => self.frii,
        }
    }
}

/// Sigma clip, center crop to 40×40, scale to `[0, 1]`.
pub fn preprocess(raw: &Image, clip: SigmaClip) -> Result<Image> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("raw image contains non-finite pixels"));
    }
    let clipped = sigma_clip(raw, clip);
    let cropped = center_crop(&clipped, IMAGE_SIDE)?;
    Ok(minmax_normalize(&cropped))
}

/// `(origin, split, aug_index)` for every record, in file order: shuffled
/// training copies, shuffled validation copies, then test images.
pub fn dataset_plan(
    labels: &[Label],
    factors: AugFactors,
    seed: u64,
) -> Result<Vec<(usize, Split, u32)>> {
    if factors.fri == 0 || factors.frii == 0 {
        return Err(Error::config("augmentation factors must be at least 1"));
    }
    let splits = stratified_split(labels, seed)?;
    let mut plan = Vec::new();
    for (part, tag) in [(Split::Train, 0x7A1u64), (Split::Val, 0x7A2)] {
        let mut recs: Vec<(usize, Split, u32)> = (0..labels.len())
            .filter(|&i| splits[i] == part)
            .flat_map(|i| (0..factors.get(labels[i])).map(move |a| (i, part, a)))
            .collect();
        RngStream::for_parts(seed, &[tag]).shuffle(&mut recs);
        plan.extend(recs);
    }
    plan.extend(
        (0..labels.len())
            .filter(|&i| splits[i] == Split::Test)
            .map(|i| (i, Split::Test, 0)),
    );
    Ok(plan)
}

/// Preprocess, split and augment raw images into a dataset.
///
/// Augmented copies draw from a stream keyed by `(origin, copy)`, so results
/// do not depend on processing order.
pub fn build_dataset(raw: &[(Image, Label)], factors: AugFactors, seed: u64) -> Result<Dataset> {
    let labels: Vec<Label> = raw.iter().map(|(_, l)| *l).collect();
    let plan = dataset_plan(&labels, factors, seed)?;
    let clean: Vec<Image> = raw
        .iter()
        .map(|(img, _)| preprocess(img, SigmaClip::default()))
        .collect::<Result<_>>()?;
    let samples = plan
        .into_iter()
        .map(|(origin, split, aug)| {
            let img = if aug == 0 {
                clean[origin].clone()
            } else {
                let mut rng = RngStream::for_parts(seed, &[0xA06, origin as u64, aug as u64]);
                augment(&clean[origin], &mut rng)
            };
            Sample {
                pixels: img.iter().map(|&v| v as f32).collect(),
                label: labels[origin],
                split,
                origin_id: origin as u32,
                aug_index: aug,
            }
        })
        .collect();
    Ok(Dataset {
        height: IMAGE_SIDE as u32,
        width: IMAGE_SIDE as u32,
        samples,
    })
}
