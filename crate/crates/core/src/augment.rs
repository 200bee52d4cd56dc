//! Seeded runtime augmentation: width/height shift, rotation, shear and
//! horizontal flip.
//!
//! Geometric transforms inverse-map every output pixel into the source and
//! clamp out-of-bounds coordinates, so vacated regions take the colour of
//! the nearest edge pixel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imageproc::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Horizontal shift as a fraction of width, drawn from `[lo, hi]`.
    pub width_shift: (f64, f64),
    /// Vertical shift as a fraction of height.
    pub height_shift: (f64, f64),
    pub rotation_degrees: (f64, f64),
    pub shear: (f64, f64),
    pub hflip: bool,
    /// Independent firing probability of each transform.
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            width_shift: (0.0, 0.2),
            height_shift: (0.0, 0.2),
            rotation_degrees: (-20.0, 20.0),
            shear: (0.0, 0.2),
            hflip: true,
            probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// A configuration under which every image passes through unchanged.
    pub fn disabled() -> Self {
        AugmentConfig {
            probability: 0.0,
            ..Self::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.probability == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "augmentation probability {} outside [0, 1]",
                self.probability
            )));
        }
        let ranges = [
            ("width shift", self.width_shift, 0.5),
            ("height shift", self.height_shift, 0.5),
            ("rotation", self.rotation_degrees, 180.0),
            ("shear", self.shear, 0.5),
        ];
        for (name, (lo, hi), bound) in ranges {
            if !(lo <= hi && lo.abs() <= bound && hi.abs() <= bound) {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] invalid (magnitude limit {bound})"
                )));
            }
        }
        Ok(())
    }
}

/// One concrete draw; `None` means the transform did not fire.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentDraw {
    pub width_shift: Option<f64>,
    pub height_shift: Option<f64>,
    pub rotation_degrees: Option<f64>,
    pub shear: Option<f64>,
    pub hflip: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let fire = |rng: &mut R| rng.gen::<f64>() < cfg.probability;
        let width_shift = fire(rng).then(|| uniform(rng, cfg.width_shift));
        let height_shift = fire(rng).then(|| uniform(rng, cfg.height_shift));
        let rotation_degrees = fire(rng).then(|| uniform(rng, cfg.rotation_degrees));
        let shear = fire(rng).then(|| uniform(rng, cfg.shear));
        let hflip = fire(rng) && cfg.hflip;
        AugmentDraw {
            width_shift,
            height_shift,
            rotation_degrees,
            shear,
            hflip,
        }
    }

    /// Applies the drawn transforms in the fixed order shift, rotate, shear,
    /// flip.
    pub fn apply(&self, img: &Image) -> Image {
        let mut out = None;
        if self.width_shift.is_some() || self.height_shift.is_some() {
            out = Some(shift(
                img,
                self.width_shift.unwrap_or(0.0),
                self.height_shift.unwrap_or(0.0),
            ));
        }
        if let Some(deg) = self.rotation_degrees {
            out = Some(rotate(out.as_ref().unwrap_or(img), deg));
        }
        if let Some(f) = self.shear {
            out = Some(shear(out.as_ref().unwrap_or(img), f));
        }
        if self.hflip {
            out = Some(hflip(out.as_ref().unwrap_or(img)));
        }
        out.unwrap_or_else(|| img.clone())
    }
}

pub fn random_augment<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    AugmentDraw::sample(cfg, rng).apply(img)
}

fn clamp_index(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Bilinear sample at a fractional coordinate, clamped to the border.
fn sample(img: &Image, sx: f64, sy: f64) -> [u8; 3] {
    let (w, h) = (img.width(), img.height());
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Translates content by `round(frac * side)` pixels (positive: right/down).
pub fn shift(img: &Image, dx_frac: f64, dy_frac: f64) -> Image {
    let dx = (dx_frac * img.width() as f64).round() as isize;
    let dy = (dy_frac * img.height() as f64).round() as isize;
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    Image::from_fn(img.width(), img.height(), |x, y| {
        img.get(
            clamp_index(x as isize - dx, img.width()),
            clamp_index(y as isize - dy, img.height()),
        )
    })
}

/// Rotates about the image center; positive angles turn the content
/// counter-clockwise as displayed.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width() - 1) as f64 / 2.0;
    let cy = (img.height() - 1) as f64 / 2.0;
    Image::from_fn(img.width(), img.height(), |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        sample(img, cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    })
}

/// Horizontal shear anchored at the bottom row: row `y` moves right by
/// `factor * (height - 1 - y)` pixels.
pub fn shear(img: &Image, factor: f64) -> Image {
    if factor == 0.0 {
        return img.clone();
    }
    let bottom = (img.height() - 1) as f64;
    Image::from_fn(img.width(), img.height(), |x, y| {
        sample(img, x as f64 - factor * (bottom - y as f64), y as f64)
    })
}

pub fn hflip(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y))
}
