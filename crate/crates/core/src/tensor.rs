//! Dense NHWC tensors and the handful of kernels MobileNetV2 inference needs.
//!
//! Every kernel accumulates in `f32` with one fixed summation order per output
//! element, so results are bit-identical from run to run.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Config(format!(
                "tensor rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", &dims, &[data.len()]));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f32) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    /// `(n, h, w, c)` of a rank-4 tensor.
    pub fn nhwc(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.dims.as_slice() {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::shape("nhwc", &self.dims, &[0, 0, 0, 0])),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn matrix(&self) -> Result<(usize, usize)> {
        match *self.dims.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape("matrix", &self.dims, &[0, 0])),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = *self.dims.last().unwrap_or(&0);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn debug_check_finite(t: &Tensor, op: &str) {
    debug_assert!(t.all_finite(), "{op} produced non-finite values");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`; odd padding puts the extra pixel
    /// on the bottom/right.
    Same,
    Valid,
}

/// Output extent and leading pad for one spatial axis.
pub fn output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, needed / 2))
        }
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
    }
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 1 || stride == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("stride must be 1 or 2, got {stride}")))
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

fn geometry(
    op: &'static str,
    x: &Tensor,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<Geometry> {
    check_stride(stride)?;
    let (n, h, w, c) = x.nhwc()?;
    let (oh, pad_top) = output_extent(h, kh, stride, padding)
        .ok_or_else(|| Error::shape(op, x.dims(), &[kh, kw]))?;
    let (ow, pad_left) = output_extent(w, kw, stride, padding)
        .ok_or_else(|| Error::shape(op, x.dims(), &[kh, kw]))?;
    Ok(Geometry {
        n,
        h,
        w,
        c,
        oh,
        ow,
        pad_top,
        pad_left,
    })
}

/// Cross-correlation with kernel laid out `[kh, kw, cin, cout]`.
pub fn conv2d(
    x: &Tensor,
    weights: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (kh, kw, cin, cout) = match *weights.dims() {
        [kh, kw, ci, co] => (kh, kw, ci, co),
        _ => return Err(Error::shape("conv2d", x.dims(), weights.dims())),
    };
    let g = geometry("conv2d", x, kh, kw, stride, padding)?;
    if g.c != cin {
        return Err(Error::shape("conv2d", x.dims(), weights.dims()));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape("conv2d bias", &[b.len()], &[cout]));
        }
    }
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![0.0f32; g.n * g.oh * g.ow * cout];
    for b in 0..g.n {
        let xb = &xd[b * g.h * g.w * cin..(b + 1) * g.h * g.w * cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((b * g.oh + oy) * g.ow + ox) * cout;
                let acc = &mut out[o..o + cout];
                if let Some(bias) = bias {
                    acc.copy_from_slice(bias);
                }
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let px = &xb[(iy as usize * g.w + ix as usize) * cin..][..cin];
                        let wk = &wd[(ky * kw + kx) * cin * cout..][..cin * cout];
                        for (ci, &xv) in px.iter().enumerate() {
                            let wrow = &wk[ci * cout..(ci + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    let t = Tensor::new(vec![g.n, g.oh, g.ow, cout], out)?;
    debug_check_finite(&t, "conv2d");
    Ok(t)
}

/// Per-channel spatial filter, kernel laid out `[kh, kw, c]`.
pub fn depthwise_conv2d(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (kh, kw, kc) = match *weights.dims() {
        [kh, kw, c] => (kh, kw, c),
        _ => return Err(Error::shape("depthwise_conv2d", x.dims(), weights.dims())),
    };
    let g = geometry("depthwise_conv2d", x, kh, kw, stride, padding)?;
    if g.c != kc {
        return Err(Error::shape("depthwise_conv2d", x.dims(), weights.dims()));
    }
    let c = g.c;
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![0.0f32; g.n * g.oh * g.ow * c];
    for b in 0..g.n {
        let xb = &xd[b * g.h * g.w * c..(b + 1) * g.h * g.w * c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((b * g.oh + oy) * g.ow + ox) * c;
                let acc = &mut out[o..o + c];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let px = &xb[(iy as usize * g.w + ix as usize) * c..][..c];
                        let wk = &wd[(ky * kw + kx) * c..][..c];
                        for ((a, &xv), &wv) in acc.iter_mut().zip(px).zip(wk) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    let t = Tensor::new(vec![g.n, g.oh, g.ow, c], out)?;
    debug_check_finite(&t, "depthwise_conv2d");
    Ok(t)
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` over the innermost axis.
pub fn batchnorm(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let c = *x.dims().last().unwrap_or(&0);
    for arr in [gamma, beta, mean, var] {
        if arr.len() != c {
            return Err(Error::shape("batchnorm", &[c], &[arr.len()]));
        }
    }
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for (i, v) in px.iter_mut().enumerate() {
            *v = gamma[i] * (*v - mean[i]) / (var[i] + eps).sqrt() + beta[i];
        }
    }
    debug_check_finite(&out, "batchnorm");
    Ok(out)
}

/// In-place `x * scale + shift` per channel, optionally clamped to `[0, 6]`.
pub fn scale_shift_inplace(x: &mut Tensor, scale: &[f32], shift: &[f32], clamp6: bool) {
    let c = scale.len();
    for px in x.data_mut().chunks_exact_mut(c) {
        for ((v, &s), &t) in px.iter_mut().zip(scale).zip(shift) {
            let y = *v * s + t;
            *v = if clamp6 { y.clamp(0.0, 6.0) } else { y };
        }
    }
}

pub fn relu6(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.clamp(0.0, 6.0);
    }
    out
}

pub fn residual_add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.dims() != y.dims() {
        return Err(Error::shape("residual_add", x.dims(), y.dims()));
    }
    let mut out = x.clone();
    for (a, &b) in out.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
    debug_check_finite(&out, "residual_add");
    Ok(out)
}

/// Spatial mean per channel; `N×H×W×C` becomes `N×1×1×C`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = x.nhwc()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool", x.dims(), &[n, 1, 1, c]));
    }
    let count = (h * w) as f64;
    let mut out = Vec::with_capacity(n * c);
    for plane in x.data().chunks_exact(h * w * c) {
        let mut sums = vec![0.0f64; c];
        for px in plane.chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        out.extend(sums.iter().map(|s| (s / count) as f32));
    }
    Tensor::new(vec![n, 1, 1, c], out)
}

/// `x·W + b` with `x: N×F`, `W: F×U`, `b: U`.
pub fn dense(x: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (n, f) = x.matrix()?;
    let (wf, u) = weights.matrix()?;
    if wf != f {
        return Err(Error::shape("dense", x.dims(), weights.dims()));
    }
    if bias.len() != u {
        return Err(Error::shape("dense bias", &[bias.len()], &[u]));
    }
    let wd = weights.data();
    let mut out = Vec::with_capacity(n * u);
    for r in 0..n {
        let mut acc = bias.to_vec();
        for (i, &xv) in x.row(r).iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&wd[i * u..(i + 1) * u]) {
                *a += xv * wv;
            }
        }
        out.extend_from_slice(&acc);
    }
    let t = Tensor::new(vec![n, u], out)?;
    debug_check_finite(&t, "dense");
    Ok(t)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let (_, u) = x.matrix()?;
    let mut out = x.clone();
    if u == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_exact_mut(u) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    debug_check_finite(&out, "softmax");
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
