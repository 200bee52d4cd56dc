//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod kernels;

use std::path::Path;

use leaflite::eval::ConfusionMatrix;
use leaflite::imageproc::Image;
use leaflite::model::{HeadParams, HeadSpec};
use leaflite::random::stream;
use leaflite::tensor::Tensor;
use leaflite::train::{self, FeatureBatch};
use rand::Rng;

const EPS: f64 = 1e-3;

/// Double-precision re-derivation of the classifier head, written without
/// reference to the engine's code paths.
pub struct HeadOracle {
    pub spec: HeadSpec,
    /// The ten trainable arrays in engine order.
    pub params: Vec<Vec<f64>>,
    pub running: [(Vec<f64>, Vec<f64>); 2],
}

impl HeadOracle {
    pub fn new(head: &HeadParams) -> Self {
        let f = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        HeadOracle {
            spec: head.spec(),
            params: head.trainable().iter().map(|p| f(p)).collect(),
            running: [
                (f(&head.bn1.moving_mean), f(&head.bn1.moving_variance)),
                (f(&head.bn2.moving_mean), f(&head.bn2.moving_variance)),
            ],
        }
    }

    fn bn(&self, x: &[f64], n: usize, c: usize, gamma: &[f64], beta: &[f64], which: usize, train: bool) -> Vec<f64> {
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            (0..c)
                .map(|j| {
                    let m = (0..n).map(|i| x[i * c + j]).sum::<f64>() / n as f64;
                    let v = (0..n).map(|i| (x[i * c + j] - m).powi(2)).sum::<f64>() / n as f64;
                    (m, v)
                })
                .unzip()
        } else {
            self.running[which].clone()
        };
        (0..n * c)
            .map(|k| {
                let j = k % c;
                gamma[j] * (x[k] - mean[j]) / (var[j] + EPS).sqrt() + beta[j]
            })
            .collect()
    }

    fn dense(x: &[f64], n: usize, w: &[f64], b: &[f64], fin: usize, fout: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * fout];
        for i in 0..n {
            for o in 0..fout {
                out[i * fout + o] = b[o] + (0..fin).map(|k| x[i * fin + k] * w[k * fout + o]).sum::<f64>();
            }
        }
        out
    }

    /// Softmax probabilities for `x` (`n×features`).
    pub fn probs(&self, x: &[f64], n: usize, mask: &[f64], train: bool) -> Vec<f64> {
        self.forward(x, n, mask, train).0
    }

    /// Probabilities plus the on/off pattern of both ReLU layers.
    pub fn forward(&self, x: &[f64], n: usize, mask: &[f64], train: bool) -> (Vec<f64>, Vec<bool>) {
        let s = self.spec;
        let p = &self.params;
        let a1 = self.bn(x, n, s.features, &p[0], &p[1], 0, train);
        let z1 = Self::dense(&a1, n, &p[2], &p[3], s.features, s.hidden1);
        let h1: Vec<f64> = z1.iter().zip(mask).map(|(&v, &m)| v.max(0.0) * m).collect();
        let z2 = Self::dense(&h1, n, &p[4], &p[5], s.hidden1, s.hidden2);
        let h2: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();
        let pattern = z1.iter().chain(&z2).map(|&v| v > 0.0).collect();
        let a2 = self.bn(&h2, n, s.hidden2, &p[6], &p[7], 1, train);
        let logits = Self::dense(&a2, n, &p[8], &p[9], s.hidden2, s.classes);
        let mut out = Vec::with_capacity(logits.len());
        for row in logits.chunks(s.classes) {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            out.extend(row.iter().map(|v| (v - m).exp() / z));
        }
        (out, pattern)
    }

    pub fn loss(&self, x: &[f64], n: usize, mask: &[f64], labels: &[usize], train: bool) -> f64 {
        self.loss_and_pattern(x, n, mask, labels, train).0
    }

    pub fn loss_and_pattern(&self, x: &[f64], n: usize, mask: &[f64], labels: &[usize], train: bool) -> (f64, Vec<bool>) {
        let k = self.spec.classes;
        let (p, pattern) = self.forward(x, n, mask, train);
        let loss = -labels.iter().enumerate().map(|(i, &l)| p[i * k + l].ln()).sum::<f64>() / n as f64;
        (loss, pattern)
    }
}

/// Worst relative disagreement per trainable tensor between analytic
/// gradients and central differences of the double-precision oracle.
pub struct GradCheck {
    pub worst: Vec<f64>,
    pub checked: usize,
    /// Entries whose nominal probe crossed a ReLU kink.
    pub refined: usize,
}

pub const FD_STEP: f64 = 1e-3;

/// `per_tensor = None` checks every scalar.
pub fn gradient_check(head: &HeadParams, n: usize, seed: u64, per_tensor: Option<usize>) -> GradCheck {
    let spec = head.spec();
    let mut rng = stream(seed, &[0x9c]);
    let feats: Vec<f32> = (0..n * spec.features).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.classes)).collect();
    let x = Tensor::new(vec![n, spec.features], feats.clone()).unwrap();
    let mask = head.dropout_mask(n, &mut rng);
    let fwd = head.forward_train_with_mask(&x, mask.clone()).unwrap();
    let grads = train::head_backward(head, &fwd.cache, &fwd.probs, &labels).unwrap();

    let oracle = HeadOracle::new(head);
    let xf: Vec<f64> = feats.iter().map(|&v| v as f64).collect();
    let mf: Vec<f64> = mask.iter().map(|&v| v as f64).collect();
    let (_, base_pattern) = oracle.loss_and_pattern(&xf, n, &mf, &labels, true);
    let mut worst = Vec::new();
    let mut checked = 0;
    let mut refined = 0;
    let mut work = HeadOracle { spec, params: oracle.params.clone(), running: oracle.running.clone() };
    for (t, analytic) in grads.values.iter().enumerate() {
        let len = analytic.len();
        let picks: Vec<usize> = match per_tensor {
            None => (0..len).collect(),
            Some(k) if k >= len => (0..len).collect(),
            Some(k) => (0..k).map(|_| rng.gen_range(0..len)).collect(),
        };
        let mut w = 0.0f64;
        for j in picks {
            // Central difference at the nominal step; if the probe flips a
            // ReLU the secant straddles a kink, so shrink the step.
            let mut h = FD_STEP;
            let numeric = loop {
                let orig = work.params[t][j];
                work.params[t][j] = orig + h;
                let (up, pu) = work.loss_and_pattern(&xf, n, &mf, &labels, true);
                work.params[t][j] = orig - h;
                let (down, pd) = work.loss_and_pattern(&xf, n, &mf, &labels, true);
                work.params[t][j] = orig;
                if (pu == base_pattern && pd == base_pattern) || h < 1e-8 {
                    break (up - down) / (2.0 * h);
                }
                h /= 100.0;
            };
            if h < FD_STEP {
                refined += 1;
            }
            w = w.max(relative_error(analytic[j] as f64, numeric));
            checked += 1;
        }
        worst.push(w);
    }
    GradCheck { worst, checked, refined }
}

/// `|a - b| / max(|a|, |b|)` with an absolute floor so entries that are
/// zero up to rounding compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= 1e-6 {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Per-class sample counts, precision, recall and F1 from the paper's
/// per-class test-set table.
pub const PER_CLASS_TABLE: [(&str, u64, f64, f64, f64); 10] = [
    ("Bacterial Spot", 425, 0.9976, 0.9953, 0.9965),
    ("Early Blight", 200, 0.9745, 0.9550, 0.9646),
    ("Late Blight", 381, 0.9794, 0.9974, 0.9883),
    ("Leaf Mold", 190, 1.000, 0.9895, 0.9947),
    ("Septoria Leaf Spot", 354, 0.9915, 0.9915, 0.9915),
    ("Two-spotted Spider Mite", 335, 0.9852, 0.9940, 0.9896),
    ("Target Spot", 281, 0.9928, 0.9858, 0.9893),
    ("Yellow Leaf Curl Virus", 1071, 1.0000, 0.9981, 0.9991),
    ("Tomato Mosaic Virus", 74, 1.0000, 1.0000, 1.0000),
    ("Healthy", 318, 0.9969, 1.0000, 0.9984),
];

/// Integer confusion matrix realizing the per-class table: diagonal
/// `round(R·n)`, off-diagonal errors placed so every column total is
/// `round(TP / P)`.
pub fn table_confusion() -> ConfusionMatrix {
    const ERRORS: [(usize, usize, u64); 13] = [
        (0, 1, 2),
        (1, 2, 8),
        (1, 5, 1),
        (2, 1, 1),
        (3, 5, 2),
        (4, 1, 2),
        (4, 6, 1),
        (5, 4, 2),
        (6, 4, 1),
        (6, 5, 2),
        (6, 0, 1),
        (7, 6, 1),
        (7, 9, 1),
    ];
    let mut cm = ConfusionMatrix::new(10);
    for &(t, p, k) in &ERRORS {
        cm.add(t, p, k);
    }
    for (c, &(_, n, ..)) in PER_CLASS_TABLE.iter().enumerate() {
        let off: u64 = (0..10).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
        cm.add(c, c, n - off);
    }
    cm
}

/// Class-separable features: each class owns a random mean direction.
pub fn separable_features(classes: usize, per_class: usize, dim: usize, seed: u64) -> FeatureBatch {
    let mut rng = stream(seed, &[0x5e9]);
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..classes * per_class {
        let c = i % classes;
        data.extend(centers[c].iter().map(|&m| 2.0 * m + rng.gen_range(-0.3..0.3)));
        labels.push(c);
    }
    FeatureBatch {
        features: Tensor::new(vec![classes * per_class, dim], data).unwrap(),
        labels,
    }
}

/// Synthetic leaf image: a tinted ellipse on a dark background with
/// class-specific spots.
pub fn leaf_image(class: usize, variant: u64, side: usize) -> Image {
    let mut rng = stream(variant, &[class as u64, 0x1eaf]);
    let tints = [[60u8, 150, 50], [150, 120, 40], [90, 60, 140], [40, 110, 160]];
    let tint = tints[class % tints.len()];
    let cx = side as f64 / 2.0 + rng.gen_range(-3.0..3.0);
    let cy = side as f64 / 2.0 + rng.gen_range(-3.0..3.0);
    let (rx, ry) = (side as f64 * 0.38, side as f64 * 0.3);
    let spots: Vec<(f64, f64)> = (0..4 + class * 3)
        .map(|_| (rng.gen_range(-0.6..0.6) * rx + cx, rng.gen_range(-0.6..0.6) * ry + cy))
        .collect();
    let mut noise = stream(variant, &[class as u64, 0x2]);
    Image::from_fn(side, side, |x, y| {
        let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
        let n: i16 = noise.gen_range(-8..=8);
        let jitter = |v: u8| (v as i16 + n).clamp(0, 255) as u8;
        if dx * dx + dy * dy > 1.0 {
            return [jitter(25), jitter(25), jitter(30)];
        }
        let spotted = spots.iter().any(|&(sx, sy)| (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2) < 9.0);
        if spotted {
            [jitter(200), jitter(190), jitter(60)]
        } else {
            tint.map(jitter)
        }
    })
}

/// Writes `classes × per_class` PNGs under `root/<class_k>/`.
pub fn write_corpus(root: &Path, classes: usize, per_class: usize, side: usize) {
    for c in 0..classes {
        let dir = root.join(format!("class_{c}"));
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            leaf_image(c, i as u64, side).save_png(&dir.join(format!("leaf_{i:03}.png"))).unwrap();
        }
    }
}
