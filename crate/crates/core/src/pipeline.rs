//! Image-to-feature plumbing shared by training, evaluation and the CLI.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::augment::{random_augment, AugmentConfig};
use crate::dataset::{batch_iter, DatasetEntry, DatasetIndex, Split, SplitAssignment};
use crate::error::Result;
use crate::eval::{repeated_eval, EvalReport, RunOutput};
use crate::imageproc::Image;
use crate::model::Model;
use crate::random::{hash_str, stream};
use crate::tensor::Tensor;
use crate::train::{FeatureBatch, FeatureSource};

/// Loads an entry and applies the model's enhancement setting.
pub fn load_enhanced(model: &Model, index: &DatasetIndex, entry: &DatasetEntry) -> Result<Image> {
    model.enhance(&Image::load(&index.absolute(entry))?)
}

/// Augmentation stream for one image in one pass (`round` is the epoch or
/// evaluation run).
pub fn augment_stream(seed: u64, split: Split, round: u64, entry: &DatasetEntry) -> rand_chacha::ChaCha8Rng {
    let key = hash_str(&entry.path.to_string_lossy());
    stream(seed, &[0xa06, split.tag(), round, key])
}

/// Enhances, augments and embeds `entries` in order.
pub fn augmented_features(
    model: &Model,
    index: &DatasetIndex,
    entries: &[DatasetEntry],
    aug: &AugmentConfig,
    seed: u64,
    split: Split,
    round: u64,
) -> Result<FeatureBatch> {
    let dim = model.graph().feature_dim();
    let mut data = Vec::with_capacity(entries.len() * dim);
    for entry in entries {
        let img = load_enhanced(model, index, entry)?;
        let img = if aug.is_disabled() {
            img
        } else {
            random_augment(&img, aug, &mut augment_stream(seed, split, round, entry))
        };
        data.extend_from_slice(model.features(&img)?.data());
    }
    Ok(FeatureBatch {
        features: Tensor::new(vec![entries.len(), dim], data)?,
        labels: entries.iter().map(|e| e.class_id).collect(),
    })
}

/// Streams TRAIN batches through the frozen backbone; the augmented
/// validation set is embedded once and reused. Without augmentation the
/// TRAIN features are embedded once as well.
pub struct ImageFeatures<'a> {
    pub model: &'a Model,
    pub index: &'a DatasetIndex,
    pub assignment: &'a SplitAssignment,
    pub augment: AugmentConfig,
    pub seed: u64,
    val: Option<FeatureBatch>,
    train: Option<HashMap<PathBuf, Vec<f32>>>,
}

impl<'a> ImageFeatures<'a> {
    pub fn new(
        model: &'a Model,
        index: &'a DatasetIndex,
        assignment: &'a SplitAssignment,
        augment: AugmentConfig,
        seed: u64,
    ) -> Self {
        ImageFeatures {
            model,
            index,
            assignment,
            augment,
            seed,
            val: None,
            train: None,
        }
    }
}

impl FeatureSource for ImageFeatures<'_> {
    fn train_batches(&mut self, epoch: usize, batch_size: usize) -> Result<Vec<FeatureBatch>> {
        let batches = batch_iter(self.index, self.assignment, Split::Train, batch_size, epoch as u64, self.seed)?;
        if !self.augment.is_disabled() {
            return batches
                .iter()
                .map(|b| augmented_features(self.model, self.index, b, &self.augment, self.seed, Split::Train, epoch as u64))
                .collect();
        }
        if self.train.is_none() {
            let members: Vec<DatasetEntry> =
                self.assignment.members(self.index, Split::Train).into_iter().cloned().collect();
            let all = augmented_features(self.model, self.index, &members, &self.augment, self.seed, Split::Train, 0)?;
            let dim = all.features.dims()[1];
            let cache = members
                .iter()
                .enumerate()
                .map(|(i, e)| (e.path.clone(), all.features.data()[i * dim..(i + 1) * dim].to_vec()))
                .collect();
            self.train = Some(cache);
        }
        let cache = self.train.as_ref().expect("filled above");
        let dim = self.model.graph().feature_dim();
        batches
            .iter()
            .map(|b| {
                let data = b.iter().flat_map(|e| cache[&e.path].iter().copied()).collect();
                Ok(FeatureBatch {
                    features: Tensor::new(vec![b.len(), dim], data)?,
                    labels: b.iter().map(|e| e.class_id).collect(),
                })
            })
            .collect()
    }

    fn validation(&mut self) -> Result<FeatureBatch> {
        if self.val.is_none() {
            let members: Vec<DatasetEntry> =
                self.assignment.members(self.index, Split::Val).into_iter().cloned().collect();
            if members.is_empty() {
                return Err(crate::Error::Dataset("split VAL is empty".into()));
            }
            self.val = Some(augmented_features(self.model, self.index, &members, &self.augment, self.seed, Split::Val, 0)?);
        }
        Ok(self.val.clone().expect("filled above"))
    }
}

/// Evaluates `split` `runs` times, each run with its own augmentation
/// stream. With augmentation disabled the features are computed once.
pub fn evaluate_split(
    model: &Model,
    index: &DatasetIndex,
    assignment: &SplitAssignment,
    split: Split,
    aug: &AugmentConfig,
    runs: usize,
    seed: u64,
) -> Result<EvalReport> {
    let members: Vec<DatasetEntry> = assignment.members(index, split).into_iter().cloned().collect();
    if members.is_empty() {
        return Err(crate::Error::Dataset(format!("split {split} is empty")));
    }
    let mut fixed: Option<FeatureBatch> = None;
    repeated_eval(&model.manifest.class_names, runs, |run| {
        let batch = match (&fixed, aug.is_disabled()) {
            (Some(b), true) => b.clone(),
            _ => {
                let b = augmented_features(model, index, &members, aug, seed, split, run as u64)?;
                if aug.is_disabled() {
                    fixed = Some(b.clone());
                }
                b
            }
        };
        let out = model.head.infer(&batch.features)?;
        Ok(RunOutput {
            probs: out.probs,
            labels: batch.labels,
        })
    })
}
