//! Parametric FRI/FRII sources for desk-scale experiments.
//!
//! FRI: bright core with one or two plume-like lobes fading away from it.
//! FRII: faint core with edge-brightened lobes ending in compact hotspots
//! brighter than the core.

use super::dataset::{Dataset, Sample, Split};
use super::preprocess::minmax_normalize;
use super::Image;
use crate::rng::RngStream;
use crate::{Label, IMAGE_SIDE};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    /// Lobe axis, degrees counter-clockwise from the +x axis.
    pub position_angle: f64,
    pub lobe_length: f64,
    pub core_flux: f64,
    pub core_sigma: f64,
    pub lobe_flux: f64,
    pub lobe_width: f64,
    /// Brightness of the second lobe relative to the first.
    pub counter_lobe: f64,
    pub hotspot_flux: f64,
    pub hotspot_sigma: f64,
    pub noise_sigma: f64,
    /// Core offset from the image center, pixels.
    pub offset: (f64, f64),
}

impl SynthParams {
    pub fn draw(label: Label, rng: &mut RngStream) -> Self {
        let position_angle = rng.uniform_range(0.0, 180.0);
        let offset = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
        let noise_sigma = rng.uniform_range(0.01, 0.03);
        match label {
            Label::Fri => Self {
                position_angle,
                lobe_length: rng.uniform_range(8.0, 16.0),
                core_flux: 1.0,
                core_sigma: rng.uniform_range(1.2, 2.0),
                lobe_flux: rng.uniform_range(0.25, 0.5),
                lobe_width: rng.uniform_range(1.0, 2.0),
                counter_lobe: rng.uniform_range(0.3, 1.0),
                hotspot_flux: 0.0,
                hotspot_sigma: 1.0,
                noise_sigma,
                offset,
            },
            Label::Frii => Self {
                position_angle,
                lobe_length: rng.uniform_range(10.0, 16.0),
                core_flux: rng.uniform_range(0.15, 0.35),
                core_sigma: rng.uniform_range(1.0, 1.5),
                lobe_flux: rng.uniform_range(0.05, 0.12),
                lobe_width: rng.uniform_range(1.5, 3.0),
                counter_lobe: rng.uniform_range(0.75, 1.0),
                hotspot_flux: rng.uniform_range(0.7, 1.0),
                hotspot_sigma: rng.uniform_range(0.9, 1.5),
                noise_sigma,
                offset,
            },
        }
    }

    /// Noise-free rendering on a `side × side` grid.
    pub fn render(&self, label: Label, side: usize) -> Image {
        let c = (side as f64 - 1.0) / 2.0;
        let (cx, cy) = (c + self.offset.0, c + self.offset.1);
        let (sin, cos) = self.position_angle.to_radians().sin_cos();
        Image::from_shape_fn((side, side), |(r, col)| {
            let (x, y) = (col as f64 - cx, r as f64 - cy);
            let r2 = x * x + y * y;
            let mut v = self.core_flux * (-r2 / (2.0 * self.core_sigma.powi(2))).exp();
            for (dir, amp) in [(1.0, 1.0), (-1.0, self.counter_lobe)] {
                let along = dir * (x * cos + y * sin);
                let across = -x * sin + y * cos;
                if along < 0.0 {
                    continue;
                }
                let len = self.lobe_length;
                let tail = if along > len {
                    (-(along - len).powi(2) / 2.0).exp()
                } else {
                    1.0
                };
                v += match label {
                    Label::Fri => {
                        let w = self.lobe_width + 0.25 * along;
                        amp * self.lobe_flux
                            * (-along / (0.5 * len)).exp()
                            * (-across * across / (2.0 * w * w)).exp()
                            * tail
                    }
                    Label::Frii => {
                        let w = self.lobe_width;
                        let lobe = amp
                            * self.lobe_flux
                            * (along / len).min(1.0)
                            * (-across * across / (2.0 * w * w)).exp()
                            * tail;
                        let d2 = (along - len).powi(2) + across * across;
                        let hot = amp
                            * self.hotspot_flux
                            * (-d2 / (2.0 * self.hotspot_sigma.powi(2))).exp();
                        lobe + hot
                    }
                };
            }
            v
        })
    }
}

/// Raw 40×40 source with additive Gaussian noise, clamped at zero.
pub fn synth_raw(label: Label, rng: &mut RngStream) -> Image {
    let p = SynthParams::draw(label, rng);
    let clean = p.render(label, IMAGE_SIDE);
    clean.mapv(|v| (v + p.noise_sigma * rng.normal()).max(0.0))
}

/// A normalized synthetic sample in `[0, 1]`.
pub fn synth_galaxy(label: Label, rng: &mut RngStream) -> Sample {
    let img = minmax_normalize(&synth_raw(label, rng));
    Sample {
        pixels: img.iter().map(|&v| v as f32).collect(),
        label,
        split: Split::Train,
        origin_id: 0,
        aug_index: 0,
    }
}

/// Unaugmented synthetic dataset with fixed per-class split sizes
/// `(train, val, test)`. Records are interleaved FRI/FRII within each split.
pub fn synth_dataset(per_class: (usize, usize, usize), seed: u64) -> Dataset {
    let mut streams: Vec<RngStream> = Label::ALL
        .iter()
        .map(|l| RngStream::for_parts(seed, &[0x5D5, l.index() as u64]))
        .collect();
    let (tr, va, te) = per_class;
    let mut samples = Vec::with_capacity(2 * (tr + va + te));
    let mut origin = 0u32;
    for (split, n) in [(Split::Train, tr), (Split::Val, va), (Split::Test, te)] {
        for _ in 0..n {
            for label in Label::ALL {
                let mut s = synth_galaxy(label, &mut streams[label.index()]);
                s.split = split;
                s.origin_id = origin;
                origin += 1;
                samples.push(s);
            }
        }
    }
    Dataset {
        height: IMAGE_SIDE as u32,
        width: IMAGE_SIDE as u32,
        samples,
    }
}

/// Pixels at least as bright as all 8 neighbours and strictly positive.
pub fn local_maxima(img: &Image) -> Vec<(usize, usize)> {
    let (h, w) = img.dim();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = img[[r, c]];
            if v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    if img[[rr as usize, cc as usize]] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push((r, c));
            }
        }
    }
    out
}
