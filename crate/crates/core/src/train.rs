//! Head training: cross-entropy, Adam, plateau bookkeeping and the epoch
//! loop.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HeadCache, HeadGradients, HeadParams, Mode};
use crate::random::stream;
use crate::tensor::{argmax, Tensor};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    /// Smallest validation-accuracy gain (as a fraction) that counts as
    /// improvement.
    pub min_delta: f64,
    pub early_stop_patience: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub dropout_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 1000,
            initial_lr: 1e-5,
            min_delta: 1e-4,
            early_stop_patience: 10,
            lr_patience: 4,
            lr_factor: 0.1,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size < 2 {
            return fail("batch size must be at least 2");
        }
        if self.max_epochs == 0 || self.early_stop_patience == 0 || self.lr_patience == 0 {
            return fail("epoch counts and patience values must be positive");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(self.min_delta >= 0.0) {
            return fail("min_delta must be non-negative");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return fail("lr_factor must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Mean of `-ln p[label]` with probabilities floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = probs.matrix()?;
    if labels.len() != n || n == 0 {
        return Err(Error::shape("cross_entropy", probs.dims(), &[labels.len()]));
    }
    let mut total = 0.0f64;
    for (r, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::shape("cross_entropy label", &[l], &[k]));
        }
        total -= (probs.row(r)[l] as f64).max(PROB_FLOOR).ln();
    }
    Ok(total / n as f64)
}

/// Gradients of the mean cross-entropy loss for a forward pass whose
/// probabilities are `probs`.
pub fn head_backward(head: &HeadParams, cache: &HeadCache, probs: &Tensor, labels: &[usize]) -> Result<HeadGradients> {
    let (n, k) = probs.matrix()?;
    if labels.len() != n || cache.batch_size() != n {
        return Err(Error::shape("head_backward", &[cache.batch_size(), k], &[labels.len()]));
    }
    let mut dlogits = probs.data().to_vec();
    for (r, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::shape("head_backward label", &[l], &[k]));
        }
        dlogits[r * k + l] -= 1.0;
    }
    dlogits.iter_mut().for_each(|g| *g /= n as f32);
    Ok(head.backward(cache, &dlogits)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn for_head(head: &HeadParams) -> Self {
        Self::new(&head.trainable().map(<[f32]>::len))
    }
}

/// One bias-corrected Adam update over parallel lists of parameter and
/// gradient arrays.
pub fn adam_step(params: &mut [&mut [f32]], grads: &[&[f32]], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape("adam_step tensor", &[p.len()], &[g.len()]));
        }
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j] as f64;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + state.epsilon);
            p[j] = (p[j] as f64 - step) as f32;
        }
    }
    Ok(())
}

/// Outcome of feeding one epoch's validation accuracy to a
/// [`PlateauTracker`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauVerdict {
    pub patient: bool,
    pub decay_lr: bool,
    pub stop: bool,
}

/// Learning-rate decay and early stopping driven by one stream of patient
/// epochs but with separate counters.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    best: f64,
    min_delta: f64,
    lr_patience: usize,
    stop_patience: usize,
    lr_wait: usize,
    stop_wait: usize,
}

impl PlateauTracker {
    pub fn new(min_delta: f64, lr_patience: usize, stop_patience: usize) -> Self {
        PlateauTracker {
            best: f64::NEG_INFINITY,
            min_delta,
            lr_patience,
            stop_patience,
            lr_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.min_delta, cfg.lr_patience, cfg.early_stop_patience)
    }

    pub fn observe(&mut self, metric: f64) -> PlateauVerdict {
        let patient = metric - self.best <= self.min_delta;
        let mut decay_lr = false;
        if patient {
            self.lr_wait += 1;
            self.stop_wait += 1;
            if self.lr_wait >= self.lr_patience {
                decay_lr = true;
                self.lr_wait = 0;
            }
        } else {
            self.best = metric;
            self.lr_wait = 0;
            self.stop_wait = 0;
        }
        PlateauVerdict {
            patient,
            decay_lr,
            stop: self.stop_wait >= self.stop_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub patient: bool,
    pub checkpoint: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr,patient\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:e},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, r.patient as u8
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().filter(|r| r.checkpoint).last()
    }
}

/// One mini-batch of pooled features with labels.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// Supplies features to the training loop. Implementations decide how
/// images are loaded, augmented and passed through the backbone.
pub trait FeatureSource {
    /// Training batches for `epoch` (1-based), in presentation order.
    fn train_batches(&mut self, epoch: usize, batch_size: usize) -> Result<Vec<FeatureBatch>>;
    /// The validation set; expected to be identical on every call.
    fn validation(&mut self) -> Result<FeatureBatch>;
}

/// Precomputed features, shuffled per epoch.
#[derive(Debug, Clone)]
pub struct InMemoryFeatures {
    pub train: FeatureBatch,
    pub val: FeatureBatch,
    pub seed: u64,
}

impl FeatureSource for InMemoryFeatures {
    fn train_batches(&mut self, epoch: usize, batch_size: usize) -> Result<Vec<FeatureBatch>> {
        let (n, f) = self.train.features.matrix()?;
        let order: Vec<usize> = crate::dataset::epoch_order(&(0..n).collect::<Vec<_>>(), crate::dataset::Split::Train, epoch as u64, self.seed);
        order
            .chunks(batch_size)
            .map(|idx| {
                let mut data = Vec::with_capacity(idx.len() * f);
                for &i in idx {
                    data.extend_from_slice(self.train.features.row(i));
                }
                Ok(FeatureBatch {
                    features: Tensor::new(vec![idx.len(), f], data)?,
                    labels: idx.iter().map(|&i| self.train.labels[i]).collect(),
                })
            })
            .collect()
    }

    fn validation(&mut self) -> Result<FeatureBatch> {
        Ok(self.val.clone())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Head from the epoch with the best validation accuracy.
    pub best: HeadParams,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

/// Loss and accuracy (fraction) of `head` in inference mode.
pub fn evaluate_head(head: &HeadParams, batch: &FeatureBatch) -> Result<(f64, f64)> {
    let out = head.infer(&batch.features)?;
    let loss = cross_entropy(&out.probs, &batch.labels)?;
    Ok((loss, batch_accuracy(&out.probs, &batch.labels)))
}

fn batch_accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let k = probs.dims()[1];
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax(&probs.data()[r * k..(r + 1) * k]) == l)
        .count();
    hits as f64 / labels.len() as f64
}

pub fn train_head(head_init: HeadParams, source: &mut dyn FeatureSource, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_head_with(head_init, source, cfg, &mut |_| {})
}

/// Like [`train_head`], reporting each finished epoch to `on_epoch`.
pub fn train_head_with(
    mut head: HeadParams,
    source: &mut dyn FeatureSource,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    head.dropout_rate = cfg.dropout_rate;
    let val = source.validation()?;
    if val.labels.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let mut adam = AdamState::for_head(&head);
    let mut tracker = PlateauTracker::from_config(cfg);
    let mut lr = cfg.initial_lr;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, HeadParams)> = None;

    for epoch in 1..=cfg.max_epochs {
        let batches = source.train_batches(epoch, cfg.batch_size)?;
        let (mut loss_sum, mut hits, mut seen) = (0.0f64, 0.0f64, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let n = batch.labels.len();
            if n < 2 {
                continue;
            }
            let mut rng = stream(cfg.seed, &[0xd209, epoch as u64, b as u64]);
            let fwd = crate::model::forward_head(&mut head, &batch.features, Mode::Train, &mut rng)?;
            let loss = cross_entropy(&fwd.probs, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}, batch {b}")));
            }
            let grads = head_backward(&head, &fwd.cache, &fwd.probs, &batch.labels)?;
            if grads.values.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch}, batch {b}")));
            }
            let grad_refs: Vec<&[f32]> = grads.values.iter().map(Vec::as_slice).collect();
            adam_step(&mut head.trainable_mut(), &grad_refs, &mut adam, lr)?;
            loss_sum += loss * n as f64;
            hits += batch_accuracy(&fwd.probs, &batch.labels) * n as f64;
            seen += n;
        }
        if seen == 0 {
            return Err(Error::Dataset("training split yields no batch of at least 2 samples".into()));
        }
        let (val_loss, val_acc) = evaluate_head(&head, &val)?;
        let verdict = tracker.observe(val_acc);
        let checkpoint = best.as_ref().map_or(true, |(acc, _, _)| val_acc > *acc);
        if checkpoint {
            best = Some((val_acc, epoch, head.clone()));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: hits / seen as f64,
            val_loss,
            val_acc,
            lr,
            patient: verdict.patient,
            checkpoint,
        };
        on_epoch(&record);
        history.records.push(record);
        if verdict.stop {
            break;
        }
        if verdict.decay_lr {
            lr *= cfg.lr_factor;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}
