use super::Image;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    None,
    LeftRight,
    UpDown,
    /// Transpose about the main diagonal.
    Diagonal,
}

impl Flip {
    pub const ALL: [Flip; 4] = [Flip::None, Flip::LeftRight, Flip::UpDown, Flip::Diagonal];

    pub fn apply(self, img: &Image) -> Image {
        use ndarray::s;
        let view = match self {
            Flip::None => img.view(),
            Flip::LeftRight => img.slice(s![.., ..;-1]),
            Flip::UpDown => img.slice(s![..;-1, ..]),
            Flip::Diagonal => img.t(),
        };
        view.as_standard_layout().into_owned()
    }
}

/// Rotate counter-clockwise by `degrees` about the image center using
/// bilinear interpolation; samples falling outside the source are zero.
pub fn rotate_bilinear(img: &Image, degrees: f64) -> Image {
    let (h, w) = img.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (mut sin, mut cos) = degrees.to_radians().sin_cos();
    // exact quarter turns keep the rotation a pure index permutation
    for v in [&mut sin, &mut cos] {
        if v.abs() < 1e-12 {
            *v = 0.0;
        } else if (v.abs() - 1.0).abs() < 1e-12 {
            *v = v.signum();
        }
    }
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img[[r as usize, c as usize]]
        }
    };
    Image::from_shape_fn((h, w), |(r, c)| {
        let (x, y) = (c as f64 - cx, r as f64 - cy);
        let xs = cos * x + sin * y + cx;
        let ys = -sin * x + cos * y + cy;
        let (x0, y0) = (xs.floor(), ys.floor());
        let (fx, fy) = (xs - x0, ys - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let mut v = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let wgt = wy * wx;
                if wgt != 0.0 {
                    v += wgt * at(yi + dy, xi + dx);
                }
            }
        }
        v
    })
}

/// Apply a given flip then rotation; the result is clamped to `[0, 1]`.
pub fn augment_with(img: &Image, flip: Flip, degrees: f64) -> Image {
    rotate_bilinear(&flip.apply(img), degrees).mapv(|v| v.clamp(0.0, 1.0))
}

/// A uniformly drawn flip followed by a rotation with angle uniform in `[0, 360)`.
pub fn augment(img: &Image, rng: &mut RngStream) -> Image {
    let flip = Flip::ALL[rng.index(4)];
    let degrees = rng.uniform() * 360.0;
    augment_with(img, flip, degrees)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Image {
        Image::from_shape_fn((n, n), |(r, c)| ((r * n + c) as f64) / (n * n) as f64)
    }

    #[test]
    fn identity() {
        let img = ramp(40);
        assert_eq!(augment_with(&img, Flip::None, 0.0), img);
    }

    #[test]
    fn quarter_turn_is_permutation() {
        let img = ramp(40);
        let out = augment_with(&img, Flip::None, 90.0);
        for r in 0..40 {
            for c in 0..40 {
                assert_eq!(out[[r, c]], img[[39 - c, r]]);
            }
        }
    }

    #[test]
    fn flips() {
        let img = ramp(4);
        assert_eq!(Flip::LeftRight.apply(&img)[[1, 0]], img[[1, 3]]);
        assert_eq!(Flip::UpDown.apply(&img)[[0, 2]], img[[3, 2]]);
        assert_eq!(Flip::Diagonal.apply(&img)[[1, 3]], img[[3, 1]]);
        for f in Flip::ALL {
            assert_eq!(f.apply(&f.apply(&img)), img);
        }
    }

    #[test]
    fn disk_intensity_preserved() {
        let disk = Image::from_shape_fn((40, 40), |(r, c)| {
            let d = ((r as f64 - 19.5).powi(2) + (c as f64 - 19.5).powi(2)).sqrt();
            if d < 10.0 {
                1.0 - d / 12.0
            } else {
                0.0
            }
        });
        let before = disk.sum();
        let mut rng = RngStream::new(9, 9);
        for _ in 0..50 {
            let after = augment(&disk, &mut rng).sum();
            assert!(
                (after - before).abs() / before < 0.02,
                "{after} vs {before}"
            );
        }
    }

    #[test]
    fn output_in_unit_range() {
        let mut rng = RngStream::new(1, 0);
        let img = Image::from_shape_simple_fn((40, 40), || rng.uniform());
        let out = augment(&img, &mut rng);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
