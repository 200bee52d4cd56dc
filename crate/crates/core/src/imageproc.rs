//! RGB rasters, Hunter Lab conversion, CLAHE on the lightness channel, and
//! conversion into the normalized network input tensor.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape("Image::new", &[height, width, 3], &[pixels.len()]));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Decodes any PNG or JPEG file into RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        let decoded = reader.decode().map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = decoded.to_rgb8();
        Image::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("pixel buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format {
                    what: "png",
                    message: other.to_string(),
                },
            })
    }
}

/// Per-pixel Hunter Lab planes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

// sRGB primaries, D65 white, XYZ scaled so Yn = 100.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
const WHITE_X: f64 = 95.047;
const WHITE_Y: f64 = 100.0;
const WHITE_Z: f64 = 108.883;
const HUNTER_KA: f64 = 172.30;
const HUNTER_KB: f64 = 67.20;

fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Hunter `(L, a, b)` of one 8-bit sRGB pixel.
pub fn hunter_lab_from_rgb(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_decode(c as f64 / 255.0));
    let [x, y, z] = RGB_TO_XYZ.map(|row| 100.0 * (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]));
    let yr = y / WHITE_Y;
    if yr <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let s = yr.sqrt();
    let l = (100.0 * s).min(100.0);
    let a = HUNTER_KA * (x / WHITE_X - yr) / s;
    let b = HUNTER_KB * (yr - z / WHITE_Z) / s;
    [l, a, b]
}

/// Inverse of [`hunter_lab_from_rgb`]; out-of-gamut channels are clamped.
pub fn rgb_from_hunter_lab(lab: [f64; 3]) -> [u8; 3] {
    let [l, a, b] = lab;
    let yr = (l.max(0.0) / 100.0).powi(2);
    let s = yr.sqrt();
    let xr = a * s / HUNTER_KA + yr;
    let zr = yr - b * s / HUNTER_KB;
    let xyz = [xr * WHITE_X / 100.0, yr * WHITE_Y / 100.0, zr * WHITE_Z / 100.0];
    XYZ_TO_RGB.map(|row| {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        let v = srgb_encode(lin.clamp(0.0, 1.0)) * 255.0;
        v.round().clamp(0.0, 255.0) as u8
    })
}

pub fn rgb_to_hunter_lab(img: &Image) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.pixels.chunks_exact(3) {
        let [pl, pa, pb] = hunter_lab_from_rgb([px[0], px[1], px[2]]);
        l.push(pl as f32);
        a.push(pa as f32);
        b.push(pb as f32);
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

pub fn hunter_lab_to_rgb(lab: &LabImage) -> Image {
    let mut pixels = Vec::with_capacity(lab.l.len() * 3);
    for i in 0..lab.l.len() {
        pixels.extend_from_slice(&rgb_from_hunter_lab([
            lab.l[i] as f64,
            lab.a[i] as f64,
            lab.b[i] as f64,
        ]));
    }
    Image {
        width: lab.width,
        height: lab.height,
        pixels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Clip limit as a multiple of the uniform bin height.
    pub clip_beta: f64,
    /// Histogram resolution over `[0, 100]` L. Clipping moves a flat tile
    /// toward mid-range by up to `clip_beta / 2` bins, so coarse histograms
    /// visibly shift uniform regions; 1024 keeps that below one 8-bit level.
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles_x: 7,
            tiles_y: 7,
            clip_beta: 3.0,
            bins: 1024,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x < 1 || self.tiles_y < 1 {
            return Err(Error::Config("CLAHE tile grid must be at least 1x1".into()));
        }
        if !(self.clip_beta > 0.0 && self.clip_beta.is_finite()) {
            return Err(Error::Config(format!(
                "CLAHE clip limit must be positive, got {}",
                self.clip_beta
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config("CLAHE needs at least 2 bins".into()));
        }
        Ok(())
    }

    /// Histogram ceiling for a tile of `tile_pixels` pixels.
    pub fn clip_limit(&self, tile_pixels: usize) -> f64 {
        self.clip_beta * tile_pixels as f64 / self.bins as f64
    }
}

/// Integer partition of `len` into `parts` spans; span `i` is
/// `bounds[i]..bounds[i + 1]` and spans differ by at most one.
pub fn tile_bounds(len: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|i| i * len / parts).collect()
}

/// Clips every bin at `limit` and spreads the excess evenly over all bins.
/// Returns the per-bin redistribution amount.
pub fn clip_histogram(hist: &mut [f64], limit: f64) -> f64 {
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / hist.len() as f64;
    for h in hist.iter_mut() {
        *h += share;
    }
    share
}

/// Bin index of a continuous value in `[0, max_value]`.
fn bin_coord(v: f32, max_value: f32, bins: usize) -> f64 {
    (v as f64 / max_value as f64).clamp(0.0, 1.0) * (bins - 1) as f64
}

/// Clipped histogram of one tile, as used to build its mapping.
pub fn tile_histogram(
    values: &[f32],
    width: usize,
    x_range: std::ops::Range<usize>,
    y_range: std::ops::Range<usize>,
    max_value: f32,
    params: &ClaheParams,
) -> Vec<f64> {
    let mut hist = vec![0.0f64; params.bins];
    let pixels = x_range.len() * y_range.len();
    for y in y_range {
        for x in x_range.clone() {
            let k = bin_coord(values[y * width + x], max_value, params.bins).round() as usize;
            hist[k] += 1.0;
        }
    }
    clip_histogram(&mut hist, params.clip_limit(pixels));
    hist
}

/// Equalizing map sampled at bin centers, in bin coordinates.
///
/// A uniform histogram yields the identity map.
fn tile_mapping(hist: &[f64]) -> Vec<f64> {
    let bins = hist.len();
    let total: f64 = hist.iter().sum();
    let mut below = 0.0;
    hist.iter()
        .map(|&h| {
            let mid = below + h / 2.0;
            below += h;
            (bins as f64 * mid / total - 0.5).clamp(0.0, (bins - 1) as f64)
        })
        .collect()
}

fn eval_mapping(map: &[f64], u: f64) -> f64 {
    let k0 = (u.floor() as usize).min(map.len() - 1);
    let k1 = (k0 + 1).min(map.len() - 1);
    let t = u - k0 as f64;
    map[k0] * (1.0 - t) + map[k1] * t
}

/// Per-pixel interpolation stencil along one axis: neighbouring tiles and
/// the weight of the second one.
fn axis_stencil(len: usize, tiles: usize) -> Vec<(usize, usize, f64)> {
    let bounds = tile_bounds(len, tiles);
    let centers: Vec<f64> = (0..tiles)
        .map(|i| (bounds[i] + bounds[i + 1]) as f64 / 2.0)
        .collect();
    (0..len)
        .map(|p| {
            let pos = p as f64 + 0.5;
            if pos <= centers[0] {
                (0, 0, 0.0)
            } else if pos >= centers[tiles - 1] {
                (tiles - 1, tiles - 1, 0.0)
            } else {
                let i = centers.partition_point(|&c| c <= pos) - 1;
                let w = (pos - centers[i]) / (centers[i + 1] - centers[i]);
                (i, i + 1, w)
            }
        })
        .collect()
}

/// CLAHE over a single continuous channel with values in `[0, max_value]`.
pub fn equalize_channel(
    values: &[f32],
    width: usize,
    height: usize,
    max_value: f32,
    params: &ClaheParams,
) -> Result<Vec<f32>> {
    params.validate()?;
    if width < params.tiles_x || height < params.tiles_y {
        return Err(Error::Config(format!(
            "image {width}x{height} is smaller than the {}x{} tile grid",
            params.tiles_x, params.tiles_y
        )));
    }
    let xb = tile_bounds(width, params.tiles_x);
    let yb = tile_bounds(height, params.tiles_y);
    let mut maps = Vec::with_capacity(params.tiles_x * params.tiles_y);
    for ty in 0..params.tiles_y {
        for tx in 0..params.tiles_x {
            let hist = tile_histogram(
                values,
                width,
                xb[tx]..xb[tx + 1],
                yb[ty]..yb[ty + 1],
                max_value,
                params,
            );
            maps.push(tile_mapping(&hist));
        }
    }
    let xs = axis_stencil(width, params.tiles_x);
    let ys = axis_stencil(height, params.tiles_y);
    let top = (params.bins - 1) as f64;
    let mut out = Vec::with_capacity(values.len());
    for (y, &(ty0, ty1, wy)) in ys.iter().enumerate() {
        for (x, &(tx0, tx1, wx)) in xs.iter().enumerate() {
            let u = bin_coord(values[y * width + x], max_value, params.bins);
            let at = |ty: usize, tx: usize| eval_mapping(&maps[ty * params.tiles_x + tx], u);
            let upper = at(ty0, tx0) * (1.0 - wx) + at(ty0, tx1) * wx;
            let lower = at(ty1, tx0) * (1.0 - wx) + at(ty1, tx1) * wx;
            let mapped = upper * (1.0 - wy) + lower * wy;
            out.push((mapped / top * max_value as f64) as f32);
        }
    }
    Ok(out)
}

/// Equalizes the Hunter L channel; a and b pass through unchanged.
pub fn clahe(img: &Image, params: &ClaheParams) -> Result<Image> {
    let mut lab = rgb_to_hunter_lab(img);
    lab.l = equalize_channel(&lab.l, lab.width, lab.height, 100.0, params)?;
    Ok(hunter_lab_to_rgb(&lab))
}

/// Bilinear resampling with half-pixel centers and edge clamping over an
/// interleaved `channels`-plane buffer.
pub fn resize_bilinear(
    src: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    out_width: usize,
    out_height: usize,
) -> Vec<f32> {
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xt = taps(out_width, width);
    let yt = taps(out_height, height);
    let mut out = Vec::with_capacity(out_width * out_height * channels);
    for &(y0, y1, fy) in &yt {
        for &(x0, x1, fx) in &xt {
            for c in 0..channels {
                let p = |x: usize, y: usize| src[(y * width + x) * channels + c];
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Resizes to `side×side` and maps `[0, 255]` onto `[-1, 1]`, producing a
/// `1×side×side×3` tensor.
pub fn to_input_tensor(img: &Image, side: usize) -> Tensor {
    let src: Vec<f32> = img.pixels.iter().map(|&v| v as f32).collect();
    let resized = if img.width == side && img.height == side {
        src
    } else {
        resize_bilinear(&src, img.width, img.height, 3, side, side)
    };
    let data = resized.into_iter().map(|v| v / 127.5 - 1.0).collect();
    Tensor::new(vec![1, side, side, 3], data).expect("resize output matches dims")
}
