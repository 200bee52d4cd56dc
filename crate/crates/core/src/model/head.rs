use rand::Rng;

use super::{HeadSpec, BN_EPSILON};
use crate::error::{Error, Result};
use crate::random::stream;
use crate::tensor::{self, Tensor};
use crate::weights::WeightStore;

/// Running-statistics momentum of the head's batch-normalization layers.
pub const BN_MOMENTUM: f32 = 0.99;

/// Trainable arrays in the order used by gradients and optimizer state.
pub const TRAINABLE_NAMES: [&str; 10] = [
    "head_bn1.gamma",
    "head_bn1.beta",
    "head_dense1.kernel",
    "head_dense1.bias",
    "head_dense2.kernel",
    "head_dense2.bias",
    "head_bn2.gamma",
    "head_bn2.beta",
    "head_out.kernel",
    "head_out.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub moving_mean: Vec<f32>,
    pub moving_variance: Vec<f32>,
}

impl BatchNormParams {
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            moving_mean: vec![0.0; channels],
            moving_variance: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn store(&self, prefix: &str, out: &mut WeightStore) {
        for (field, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("moving_mean", &self.moving_mean),
            ("moving_variance", &self.moving_variance),
        ] {
            out.insert(format!("{prefix}.{field}"), Tensor::new(vec![v.len()], v.clone()).expect("rank 1"));
        }
    }

    fn load(prefix: &str, store: &WeightStore) -> Self {
        let get = |f: &str| store.get(&format!("{prefix}.{f}")).expect("checked").data().to_vec();
        BatchNormParams {
            gamma: get("gamma"),
            beta: get("beta"),
            moving_mean: get("moving_mean"),
            moving_variance: get("moving_variance"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `inputs × units`.
    pub kernel: Tensor,
    pub bias: Vec<f32>,
}

impl DenseParams {
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + units) as f64).sqrt() as f32;
        let data = (0..inputs * units).map(|_| rng.gen_range(-limit..=limit)).collect();
        DenseParams {
            kernel: Tensor::new(vec![inputs, units], data).expect("dims match data"),
            bias: vec![0.0; units],
        }
    }

    pub fn inputs(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn units(&self) -> usize {
        self.bias.len()
    }

    fn store(&self, prefix: &str, out: &mut WeightStore) {
        out.insert(format!("{prefix}.kernel"), self.kernel.clone());
        out.insert(format!("{prefix}.bias"), Tensor::new(vec![self.units()], self.bias.clone()).expect("rank 1"));
    }

    fn load(prefix: &str, store: &WeightStore) -> Self {
        DenseParams {
            kernel: store.get(&format!("{prefix}.kernel")).expect("checked").clone(),
            bias: store.get(&format!("{prefix}.bias")).expect("checked").data().to_vec(),
        }
    }
}

/// BN → Dense/ReLU → Dropout → Dense/ReLU → BN → Dense → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub bn1: BatchNormParams,
    pub dense1: DenseParams,
    pub dense2: DenseParams,
    pub bn2: BatchNormParams,
    pub out: DenseParams,
    pub dropout_rate: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    batch_mean: Vec<f32>,
    batch_var: Vec<f32>,
}

/// Intermediates of one forward pass, consumed by [`HeadParams::backward`].
#[derive(Debug, Clone)]
pub struct HeadCache {
    mode: Mode,
    n: usize,
    bn1: BnCache,
    a1: Vec<f32>,
    h1: Vec<f32>,
    mask: Vec<f32>,
    d1: Vec<f32>,
    h2: Vec<f32>,
    bn2: BnCache,
    a2: Vec<f32>,
}

impl HeadCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn dropout_mask(&self) -> &[f32] {
        &self.mask
    }
}

#[derive(Debug, Clone)]
pub struct HeadForward {
    pub logits: Tensor,
    pub probs: Tensor,
    pub cache: HeadCache,
}

/// Gradients of the trainable arrays, ordered as [`TRAINABLE_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub values: Vec<Vec<f32>>,
}

impl HeadParams {
    pub fn init(spec: &HeadSpec, dropout_rate: f32, seed: u64) -> Result<Self> {
        check_rate(dropout_rate)?;
        let mut rng = stream(seed, &[0x4ead]);
        Ok(HeadParams {
            bn1: BatchNormParams::identity(spec.features),
            dense1: DenseParams::glorot(spec.features, spec.hidden1, &mut rng),
            dense2: DenseParams::glorot(spec.hidden1, spec.hidden2, &mut rng),
            bn2: BatchNormParams::identity(spec.hidden2),
            out: DenseParams::glorot(spec.hidden2, spec.classes, &mut rng),
            dropout_rate,
        })
    }

    pub fn spec(&self) -> HeadSpec {
        HeadSpec {
            features: self.bn1.channels(),
            hidden1: self.dense1.units(),
            hidden2: self.dense2.units(),
            classes: self.out.units(),
        }
    }

    pub fn param_shapes(spec: &HeadSpec) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        let bn = |v: &mut Vec<(String, Vec<usize>)>, p: &str, c: usize| {
            for f in ["gamma", "beta", "moving_mean", "moving_variance"] {
                v.push((format!("{p}.{f}"), vec![c]));
            }
        };
        let dense = |v: &mut Vec<(String, Vec<usize>)>, p: &str, i: usize, u: usize| {
            v.push((format!("{p}.kernel"), vec![i, u]));
            v.push((format!("{p}.bias"), vec![u]));
        };
        bn(&mut v, "head_bn1", spec.features);
        dense(&mut v, "head_dense1", spec.features, spec.hidden1);
        dense(&mut v, "head_dense2", spec.hidden1, spec.hidden2);
        bn(&mut v, "head_bn2", spec.hidden2);
        dense(&mut v, "head_out", spec.hidden2, spec.classes);
        v
    }

    /// All stored scalars, running statistics included.
    pub fn param_count(&self) -> usize {
        Self::param_shapes(&self.spec())
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }

    pub fn to_store(&self) -> WeightStore {
        let mut s = WeightStore::new();
        self.bn1.store("head_bn1", &mut s);
        self.dense1.store("head_dense1", &mut s);
        self.dense2.store("head_dense2", &mut s);
        self.bn2.store("head_bn2", &mut s);
        self.out.store("head_out", &mut s);
        s
    }

    pub fn from_store(store: &WeightStore, dropout_rate: f32) -> Result<Self> {
        check_rate(dropout_rate)?;
        let len = |name: &str| store.get(name).map(Tensor::len).unwrap_or(0);
        let spec = HeadSpec {
            features: len("head_bn1.gamma"),
            hidden1: len("head_dense1.bias"),
            hidden2: len("head_dense2.bias"),
            classes: len("head_out.bias"),
        };
        store.check_against(&Self::param_shapes(&spec))?;
        Ok(HeadParams {
            bn1: BatchNormParams::load("head_bn1", store),
            dense1: DenseParams::load("head_dense1", store),
            dense2: DenseParams::load("head_dense2", store),
            bn2: BatchNormParams::load("head_bn2", store),
            out: DenseParams::load("head_out", store),
            dropout_rate,
        })
    }

    pub fn trainable(&self) -> [&[f32]; 10] {
        [
            &self.bn1.gamma,
            &self.bn1.beta,
            self.dense1.kernel.data(),
            &self.dense1.bias,
            self.dense2.kernel.data(),
            &self.dense2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            self.out.kernel.data(),
            &self.out.bias,
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut [f32]; 10] {
        [
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            self.dense1.kernel.data_mut(),
            &mut self.dense1.bias,
            self.dense2.kernel.data_mut(),
            &mut self.dense2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            self.out.kernel.data_mut(),
            &mut self.out.bias,
        ]
    }

    fn check_features(&self, features: &Tensor) -> Result<usize> {
        let (n, f) = features.matrix()?;
        if f != self.bn1.channels() || n == 0 {
            return Err(Error::shape("forward_head", features.dims(), &[n.max(1), self.bn1.channels()]));
        }
        Ok(n)
    }

    /// Inference pass: no dropout, batch normalization from running
    /// statistics.
    pub fn infer(&self, features: &Tensor) -> Result<HeadForward> {
        let n = self.check_features(features)?;
        let ones = vec![1.0; n * self.dense1.units()];
        self.run(features, Mode::Infer, ones)
    }

    /// Training pass with an explicit dropout mask (entries `0` or the
    /// inverted keep scale). Running statistics are left untouched.
    pub fn forward_train_with_mask(&self, features: &Tensor, mask: Vec<f32>) -> Result<HeadForward> {
        let n = self.check_features(features)?;
        if n < 2 {
            return Err(Error::Numeric(
                "training-mode batch normalization needs at least 2 samples".into(),
            ));
        }
        if mask.len() != n * self.dense1.units() {
            return Err(Error::shape("dropout mask", &[mask.len()], &[n, self.dense1.units()]));
        }
        self.run(features, Mode::Train, mask)
    }

    /// Draws an inverted-dropout mask for `n` rows.
    pub fn dropout_mask<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f32> {
        let len = n * self.dense1.units();
        if self.dropout_rate == 0.0 {
            return vec![1.0; len];
        }
        let keep = 1.0 / (1.0 - self.dropout_rate);
        (0..len)
            .map(|_| if rng.gen::<f32>() < self.dropout_rate { 0.0 } else { keep })
            .collect()
    }

    fn run(&self, features: &Tensor, mode: Mode, mask: Vec<f32>) -> Result<HeadForward> {
        let n = features.dims()[0];
        let (a1, bn1) = bn_forward(features.data(), n, &self.bn1, mode);
        let h1 = affine(&a1, n, &self.dense1);
        let d1: Vec<f32> = h1.iter().zip(&mask).map(|(&h, &m)| h.max(0.0) * m).collect();
        let h2 = affine(&d1, n, &self.dense2);
        let r2: Vec<f32> = h2.iter().map(|&h| h.max(0.0)).collect();
        let (a2, bn2) = bn_forward(&r2, n, &self.bn2, mode);
        let logits = Tensor::new(vec![n, self.out.units()], affine(&a2, n, &self.out))?;
        if !logits.all_finite() {
            return Err(Error::Numeric("head produced non-finite logits".into()));
        }
        let probs = tensor::softmax(&logits)?;
        Ok(HeadForward {
            logits,
            probs,
            cache: HeadCache {
                mode,
                n,
                bn1,
                a1,
                h1,
                mask,
                d1,
                h2,
                bn2,
                a2,
            },
        })
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages; the variance update uses the unbiased estimate.
    pub fn update_running_stats(&mut self, cache: &HeadCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let correction = cache.n as f32 / (cache.n as f32 - 1.0);
        for (bn, c) in [(&mut self.bn1, &cache.bn1), (&mut self.bn2, &cache.bn2)] {
            for j in 0..bn.channels() {
                bn.moving_mean[j] = BN_MOMENTUM * bn.moving_mean[j] + (1.0 - BN_MOMENTUM) * c.batch_mean[j];
                bn.moving_variance[j] =
                    BN_MOMENTUM * bn.moving_variance[j] + (1.0 - BN_MOMENTUM) * c.batch_var[j] * correction;
            }
        }
    }

    /// Backpropagates `dlogits` (`N×classes`) through the head. Returns the
    /// parameter gradients and the gradient with respect to the input
    /// features.
    pub fn backward(&self, cache: &HeadCache, dlogits: &[f32]) -> Result<(HeadGradients, Vec<f32>)> {
        let n = cache.n;
        if dlogits.len() != n * self.out.units() {
            return Err(Error::shape("head backward", &[dlogits.len()], &[n, self.out.units()]));
        }
        let (d_out_k, d_out_b, da2) = affine_backward(&cache.a2, dlogits, n, &self.out);
        let (dg2, db2, dr2) = bn_backward(&da2, n, &self.bn2, &cache.bn2, cache.mode);
        let dh2: Vec<f32> = dr2.iter().zip(&cache.h2).map(|(&g, &h)| if h > 0.0 { g } else { 0.0 }).collect();
        let (d2_k, d2_b, dd1) = affine_backward(&cache.d1, &dh2, n, &self.dense2);
        let dh1: Vec<f32> = dd1
            .iter()
            .zip(&cache.mask)
            .zip(&cache.h1)
            .map(|((&g, &m), &h)| if h > 0.0 { g * m } else { 0.0 })
            .collect();
        let (d1_k, d1_b, da1) = affine_backward(&cache.a1, &dh1, n, &self.dense1);
        let (dg1, db1, dx) = bn_backward(&da1, n, &self.bn1, &cache.bn1, cache.mode);
        Ok((
            HeadGradients {
                values: vec![dg1, db1, d1_k, d1_b, d2_k, d2_b, dg2, db2, d_out_k, d_out_b],
            },
            dx,
        ))
    }
}

/// Dispatches on `mode`; training mode draws the dropout mask from `rng`
/// and updates the running statistics.
pub fn forward_head<R: Rng + ?Sized>(
    head: &mut HeadParams,
    features: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<HeadForward> {
    match mode {
        Mode::Infer => head.infer(features),
        Mode::Train => {
            let n = head.check_features(features)?;
            let mask = head.dropout_mask(n, rng);
            let fwd = head.forward_train_with_mask(features, mask)?;
            head.update_running_stats(&fwd.cache);
            Ok(fwd)
        }
    }
}

fn check_rate(rate: f32) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

fn bn_forward(x: &[f32], n: usize, p: &BatchNormParams, mode: Mode) -> (Vec<f32>, BnCache) {
    let c = p.channels();
    let (mean, var) = match mode {
        Mode::Infer => (p.moving_mean.clone(), p.moving_variance.clone()),
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            for row in x.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0f64; c];
            for row in x.chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v as f64 - m).powi(2);
                }
            }
            (
                mean.iter().map(|&m| m as f32).collect(),
                var.iter().map(|&s| (s / n as f64) as f32).collect(),
            )
        }
    };
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        for j in 0..c {
            let h = (row[j] - mean[j]) * inv_std[j];
            xhat.push(h);
            y.push(p.gamma[j] * h + p.beta[j]);
        }
    }
    let cache = BnCache {
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    };
    (y, cache)
}

fn bn_backward(dy: &[f32], n: usize, p: &BatchNormParams, cache: &BnCache, mode: Mode) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let c = p.channels();
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for (g, h) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            dgamma[j] += g[j] * h[j];
            dbeta[j] += g[j];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for (g, h) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            let scale = p.gamma[j] * cache.inv_std[j];
            dx.push(match mode {
                Mode::Infer => g[j] * scale,
                Mode::Train => scale / n as f32 * (n as f32 * g[j] - dbeta[j] - h[j] * dgamma[j]),
            });
        }
    }
    (dgamma, dbeta, dx)
}

fn affine(x: &[f32], n: usize, p: &DenseParams) -> Vec<f32> {
    let (f, u) = (p.inputs(), p.units());
    let w = p.kernel.data();
    let mut out = Vec::with_capacity(n * u);
    for row in x.chunks_exact(f).take(n) {
        let mut acc = p.bias.clone();
        for (i, &xv) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w[i * u..(i + 1) * u]) {
                *a += xv * wv;
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Returns `(dW, db, dx)` for `y = xW + b`.
fn affine_backward(x: &[f32], dy: &[f32], n: usize, p: &DenseParams) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (f, u) = (p.inputs(), p.units());
    let w = p.kernel.data();
    let mut dw = vec![0.0f32; f * u];
    let mut db = vec![0.0f32; u];
    let mut dx = vec![0.0f32; n * f];
    for r in 0..n {
        let xr = &x[r * f..(r + 1) * f];
        let gr = &dy[r * u..(r + 1) * u];
        for (b, &g) in db.iter_mut().zip(gr) {
            *b += g;
        }
        for i in 0..f {
            let wi = &w[i * u..(i + 1) * u];
            let mut acc = 0.0f32;
            for ((d, &wv), &g) in dw[i * u..(i + 1) * u].iter_mut().zip(wi).zip(gr) {
                *d += xr[i] * g;
                acc += wv * g;
            }
            dx[r * f + i] = acc;
        }
    }
    (dw, db, dx)
}
