//! Nested-loop scalar references for the tensor kernels, in f64.

use leaflite::random::stream;
use leaflite::tensor::{batchnorm, conv2d, dense, depthwise_conv2d, global_avg_pool, softmax, Padding, Tensor};
use rand::Rng;

/// Output extent and leading pad of one spatial axis.
pub fn pads(input: usize, k: usize, s: usize, padding: Padding) -> (usize, isize) {
    match padding {
        Padding::Valid => ((input - k) / s + 1, 0),
        Padding::Same => {
            let out = (input + s - 1) / s;
            let total = ((out - 1) * s + k).saturating_sub(input);
            (out, (total / 2) as isize)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f32],
    dims: [usize; 4],
    w: &[f32],
    k: usize,
    cout: usize,
    bias: Option<&[f32]>,
    s: usize,
    padding: Padding,
) -> (Vec<f64>, [usize; 4]) {
    let [n, h, wd, cin] = dims;
    let (oh, pt) = pads(h, k, s, padding);
    let (ow, pl) = pads(wd, k, s, padding);
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias.map_or(0.0, |b| b[co] as f64);
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - pt;
                            let ix = (ox * s + kx) as isize - pl;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((b * h + iy as usize) * wd + ix as usize) * cin + ci] as f64;
                                let wv = w[((ky * k + kx) * cin + ci) * cout + co] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    (out, [n, oh, ow, cout])
}

/// Per-channel depthwise filter written as a block-diagonal full kernel.
pub fn block_diagonal(wd: &[f32], k: usize, c: usize) -> Vec<f32> {
    let mut full = vec![0.0f32; k * k * c * c];
    for tap in 0..k * k {
        for ch in 0..c {
            full[(tap * c + ch) * c + ch] = wd[tap * c + ch];
        }
    }
    full
}

pub fn batchnorm_oracle(x: &[f32], c: usize, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            gamma[ch] as f64 * (v as f64 - mean[ch] as f64) / (var[ch] as f64 + eps as f64).sqrt() + beta[ch] as f64
        })
        .collect()
}

pub fn dense_oracle(x: &[f32], n: usize, f: usize, w: &[f32], b: &[f32]) -> Vec<f64> {
    let u = b.len();
    let mut out = vec![0.0f64; n * u];
    for i in 0..n {
        for j in 0..u {
            out[i * u + j] = b[j] as f64 + (0..f).map(|k| x[i * f + k] as f64 * w[k * u + j] as f64).sum::<f64>();
        }
    }
    out
}

pub fn softmax_oracle(x: &[f32], u: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in x.chunks(u) {
        let denom: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
        out.extend(row.iter().map(|&v| (v as f64).exp() / denom));
    }
    out
}

pub fn pool_oracle(x: &[f32], n: usize, hw: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * c];
    for b in 0..n {
        for p in 0..hw {
            for ch in 0..c {
                out[b * c + ch] += x[(b * hw + p) * c + ch] as f64 / hw as f64;
            }
        }
    }
    out
}

/// Relative error scaled by `max(|want|, 1)`, so entries near zero are
/// judged absolutely.
pub fn scaled_error(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Worst error of each kernel over `cases` random small shapes.
pub fn kernel_suite(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = stream(seed, &[0x6e7]);
    let mut worst = [0.0f64; 6];
    for _ in 0..cases {
        let mut vals = |len: usize, lo: f32, hi: f32| -> Vec<f32> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
        // conv2d
        let n = 1 + (vals(1, 0.0, 2.0)[0] as usize);
        let dims = vals(4, 0.0, 1.0);
        let (h, w) = (3 + (dims[0] * 6.0) as usize, 3 + (dims[1] * 6.0) as usize);
        let (cin, cout) = (1 + (dims[2] * 4.0) as usize, 1 + (dims[3] * 4.0) as usize);
        let flags = vals(3, 0.0, 1.0);
        let k = if flags[0] < 0.5 { 1 } else { 3 };
        let stride = if flags[1] < 0.5 { 1 } else { 2 };
        let padding = if flags[2] < 0.5 { Padding::Same } else { Padding::Valid };
        let x = vals(n * h * w * cin, -2.0, 2.0);
        let kw = vals(k * k * cin * cout, -2.0, 2.0);
        let bias = vals(cout, -1.0, 1.0);
        let xt = Tensor::new(vec![n, h, w, cin], x.clone()).unwrap();
        let got = conv2d(&xt, &Tensor::new(vec![k, k, cin, cout], kw.clone()).unwrap(), Some(&bias), stride, padding).unwrap();
        let (want, _) = conv_oracle(&x, [n, h, w, cin], &kw, k, cout, Some(&bias), stride, padding);
        worst[0] = worst[0].max(scaled_error(got.data(), &want));

        // depthwise on the same input
        let dw = vals(k * k * cin, -2.0, 2.0);
        let got = depthwise_conv2d(&xt, &Tensor::new(vec![k, k, cin], dw.clone()).unwrap(), stride, padding).unwrap();
        let (want, _) = conv_oracle(&x, [n, h, w, cin], &block_diagonal(&dw, k, cin), k, cin, None, stride, padding);
        worst[1] = worst[1].max(scaled_error(got.data(), &want));

        // batchnorm over rows of `cin` channels
        let rows = n * h * w;
        let (g, b, m) = (vals(cin, -2.0, 2.0), vals(cin, -2.0, 2.0), vals(cin, -2.0, 2.0));
        let var = vals(cin, 0.0, 3.0);
        let got = batchnorm(&Tensor::new(vec![rows, cin], x.clone()).unwrap(), &g, &b, &m, &var, 1e-3).unwrap();
        worst[2] = worst[2].max(scaled_error(got.data(), &batchnorm_oracle(&x, cin, &g, &b, &m, &var, 1e-3)));

        // dense with f = h·cin features
        let f = h * cin;
        let dx = vals(n * f, -2.0, 2.0);
        let dwt = vals(f * cout, -2.0, 2.0);
        let got = dense(&Tensor::new(vec![n, f], dx.clone()).unwrap(), &Tensor::new(vec![f, cout], dwt.clone()).unwrap(), &bias).unwrap();
        worst[3] = worst[3].max(scaled_error(got.data(), &dense_oracle(&dx, n, f, &dwt, &bias)));

        // softmax on wide-range logits; probabilities compared absolutely
        let logits = vals(n * (cout + 1), -30.0, 30.0);
        let got = softmax(&Tensor::new(vec![n, cout + 1], logits.clone()).unwrap()).unwrap();
        worst[4] = worst[4].max(scaled_error(got.data(), &softmax_oracle(&logits, cout + 1)));

        // global average pooling
        let got = global_avg_pool(&xt).unwrap();
        worst[5] = worst[5].max(scaled_error(got.data(), &pool_oracle(&x, n, h * w, cin)));
    }
    ["conv2d", "depthwise_conv2d", "batchnorm", "dense", "softmax", "global_avg_pool"]
        .into_iter()
        .zip(worst)
        .collect()
}
