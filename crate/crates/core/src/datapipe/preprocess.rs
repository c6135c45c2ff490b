use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaClip {
    pub nsigma: f64,
    pub max_iters: usize,
}

impl Default for SigmaClip {
    fn default() -> Self {
        Self {
            nsigma: 3.0,
            max_iters: 5,
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Suppress the background: estimate its mean and standard deviation from
/// the pixels at or below `mean + nsigma * std`, iterating until that set is
/// stable (or `max_iters`), then zero every pixel below the final threshold.
pub fn sigma_clip(img: &Image, opts: SigmaClip) -> Image {
    if img.is_empty() {
        return img.clone();
    }
    let all: Vec<f64> = img.iter().copied().collect();
    let mut retained = all.clone();
    let (mut mean, mut std) = mean_std(&retained);
    for _ in 0..opts.max_iters {
        let thr = mean + opts.nsigma * std;
        let next: Vec<f64> = all.iter().copied().filter(|&v| v <= thr).collect();
        if next.len() == retained.len() || next.is_empty() {
            break;
        }
        retained = next;
        (mean, std) = mean_std(&retained);
    }
    let thr = mean + opts.nsigma * std;
    img.mapv(|v| if v < thr { 0.0 } else { v })
}

/// Centered `size × size` window starting at `floor((H - size) / 2)`.
pub fn center_crop(img: &Image, size: usize) -> Result<Image> {
    let (h, w) = img.dim();
    if h < size || w < size {
        return Err(Error::validation(format!(
            "cannot crop {size}×{size} from a {h}×{w} image"
        )));
    }
    let (r0, c0) = ((h - size) / 2, (w - size) / 2);
    Ok(img
        .slice(ndarray::s![r0..r0 + size, c0..c0 + size])
        .to_owned())
}

/// Affine map onto `[0, 1]`; a constant image maps to all zeros.
pub fn minmax_normalize(img: &Image) -> Image {
    let min = img.iter().copied().fold(f64::INFINITY, f64::min);
    let max = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Image::zeros(img.dim());
    }
    let range = max - min;
    img.mapv(|v| ((v - min) / range).clamp(0.0, 1.0))
}
