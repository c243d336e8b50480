//! SGD training with softmax cross-entropy, deterministic k-fold
//! cross-validation, and confusion-matrix metrics.

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::layers::log_sum_exp;
use crate::network::{backward, forward, init_params, NetworkGraph, ParamSet};
use crate::tensor::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate is multiplied by `lr_step_factor` every
    /// `lr_step_interval` epochs.
    pub lr_step_factor: f32,
    pub lr_step_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            batch_size: 32,
            lr_step_factor: 0.1,
            lr_step_interval: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.lr_step_interval == 0 {
            return Err(Error::InvalidConfig("lr_step_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// `-log p(target)`, computed from logits in fused form.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> T {
    log_sum_exp(logits) - logits[target]
}

/// Deterministic partition of `n_samples` into `k` disjoint folds: seeded
/// shuffle, then round-robin assignment. Fold sizes differ by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    /// `assignments[sample] = fold id`
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

pub fn make_folds(n_samples: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || n_samples < k {
        return Err(Error::TooFewSamples { n_samples, k });
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignments = vec![0usize; n_samples];
    for (position, &sample) in order.iter().enumerate() {
        assignments[sample] = position % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Fold assignment by group (e.g. subject or session): every sample of a
/// group lands in the same fold.
pub fn make_folds_by_group(groups: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut unique: Vec<&String> = Vec::new();
    for g in groups {
        if !unique.contains(&g) {
            unique.push(g);
        }
    }
    if k < 2 || unique.len() < k {
        return Err(Error::TooFewSamples { n_samples: unique.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..unique.len()).collect();
    order.shuffle(&mut rng);
    let mut group_fold = std::collections::BTreeMap::new();
    for (position, &gi) in order.iter().enumerate() {
        group_fold.insert(unique[gi].clone(), position % k);
    }
    let assignments = groups.iter().map(|g| group_fold[g]).collect();
    Ok(FoldPlan { k, assignments })
}

/// Per-class counts of (true, predicted) pairs; rows are true classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix { class_names, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        let k = self.num_classes();
        self.counts[true_class * k + predicted] += 1;
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        let k = self.num_classes();
        (0..k).map(|i| self.counts[i * k + i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 { 0.0 } else { self.trace() as f64 / total as f64 }
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        let k = self.num_classes();
        self.counts[true_class * k..(true_class + 1) * k].iter().sum()
    }

    /// Elementwise sum; class tables must match.
    pub fn add(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.class_names, other.class_names, "incompatible confusion matrices");
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Per-true-class rates: each row divided by its sum (zero rows stay zero).
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        let k = self.num_classes();
        (0..k)
            .map(|i| {
                let sum = self.row_sum(i);
                (0..k)
                    .map(|j| {
                        if sum == 0 { 0.0 } else { self.count(i, j) as f64 / sum as f64 }
                    })
                    .collect()
            })
            .collect()
    }

    /// CSV with class-name header row and column; cells are per-true-class
    /// percentages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.row_normalized().iter().enumerate() {
            write!(out, "{}", self.class_names[i]).unwrap();
            for cell in row {
                write!(out, ",{:.2}", 100.0 * cell).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub train_accuracy: f64,
}

pub struct TrainResult {
    pub params: ParamSet<f32>,
    pub loss_curve: Vec<EpochStats>,
}

/// Mini-batch SGD with momentum and weight decay on the mean cross-entropy,
/// fully deterministic given the config seed.
pub fn train(g: &NetworkGraph, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainResult> {
    let indices: Vec<usize> = (0..dataset.samples.len()).collect();
    train_subset(g, dataset, &indices, cfg)
}

/// [`train`] restricted to the given sample indices (used per fold).
pub fn train_subset(
    g: &NetworkGraph,
    dataset: &LabeledDataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for &i in indices {
        let label = dataset.samples[i].label;
        if label >= g.num_classes {
            return Err(Error::InvalidTarget { target: label, num_classes: g.num_classes });
        }
    }

    let mut params: ParamSet<f32> = init_params(g, cfg.seed);
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order = indices.to_vec();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate
            * cfg.lr_step_factor.powi((epoch / cfg.lr_step_interval) as i32);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad_sum = params.zeros_like();
            let mut batch_loss = 0.0f32;
            for &si in batch {
                let sample = &dataset.samples[si];
                let out = backward(g, &params, &sample.image, sample.label)?;
                batch_loss += out.loss;
                if crate::layers::argmax_class(&out.probabilities) == sample.label {
                    correct += 1;
                }
                grad_sum.axpy(1.0, &out.gradients)?;
            }
            let scale = 1.0 / batch.len() as f32;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss as f64 * batch.len() as f64;

            if lr > 0.0 {
                // v = momentum*v - lr*(mean grad + weight_decay*w); w += v
                for (key, v) in velocity.iter_mut() {
                    let g_t = grad_sum.get(key)?;
                    let w = params.get(key)?;
                    let decay = if key.ends_with(".bias") { 0.0 } else { cfg.weight_decay };
                    for ((vv, &gg), &ww) in
                        v.as_mut_slice().iter_mut().zip(g_t.as_slice()).zip(w.as_slice())
                    {
                        *vv = cfg.momentum * *vv - lr * (gg * scale + decay * ww);
                    }
                }
                params.axpy(1.0, &velocity)?;
            }
        }
        loss_curve.push(EpochStats {
            epoch,
            mean_loss: (epoch_loss / order.len() as f64) as f32,
            train_accuracy: correct as f64 / order.len() as f64,
        });
    }
    Ok(TrainResult { params, loss_curve })
}

#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub source_id: String,
    pub true_class: usize,
    pub predicted: usize,
    pub probabilities: Vec<f32>,
}

pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate(
    g: &NetworkGraph,
    params: &ParamSet<f32>,
    dataset: &LabeledDataset,
) -> Result<EvalResult> {
    let indices: Vec<usize> = (0..dataset.samples.len()).collect();
    evaluate_subset(g, params, dataset, &indices)
}

pub fn evaluate_subset(
    g: &NetworkGraph,
    params: &ParamSet<f32>,
    dataset: &LabeledDataset,
    indices: &[usize],
) -> Result<EvalResult> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.class_names.len() != g.num_classes {
        return Err(Error::ClassCountMismatch {
            checkpoint: g.num_classes,
            requested: dataset.class_names.len(),
        });
    }
    let mut confusion = ConfusionMatrix::new(dataset.class_names.clone());
    let mut predictions = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = &dataset.samples[i];
        let out = forward(g, params, &sample.image, false)?;
        let predicted = out.predicted_class();
        confusion.record(sample.label, predicted);
        predictions.push(PredictionRecord {
            source_id: sample.source_id.clone(),
            true_class: sample.label,
            predicted,
            probabilities: out.probabilities,
        });
    }
    Ok(EvalResult { accuracy: confusion.accuracy(), confusion, predictions })
}

pub struct FoldOutcome {
    pub fold: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub loss_curve: Vec<EpochStats>,
}

pub struct CrossValResult {
    pub folds: Vec<FoldOutcome>,
    pub mean_accuracy: f64,
    /// Elementwise sum of fold confusion matrices; report it row-normalized.
    pub summed_confusion: ConfusionMatrix,
}

/// Leave-one-fold-out evaluation: for each fold, train on the others and
/// evaluate on it. Fold seeds are derived from the config seed, so results
/// do not depend on whether folds run in parallel.
pub fn cross_validate(
    g: &NetworkGraph,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    k: usize,
    parallel: bool,
) -> Result<CrossValResult> {
    let plan = make_folds(dataset.samples.len(), k, cfg.seed)?;
    cross_validate_with_plan(g, dataset, cfg, &plan, parallel)
}

pub fn cross_validate_with_plan(
    g: &NetworkGraph,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    parallel: bool,
) -> Result<CrossValResult> {
    let run_fold = |fold: usize| -> Result<FoldOutcome> {
        let test = plan.fold_indices(fold);
        let train_idx = plan.train_indices(fold);
        debug_assert!(test.iter().all(|i| !train_idx.contains(i)), "train/test leakage");
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1));
        let trained = train_subset(g, dataset, &train_idx, &fold_cfg)
            .map_err(|e| annotate_fold(e, fold))?;
        let eval = evaluate_subset(g, &trained.params, dataset, &test)?;
        Ok(FoldOutcome {
            fold,
            accuracy: eval.accuracy,
            confusion: eval.confusion,
            loss_curve: trained.loss_curve,
        })
    };

    let outcomes: Result<Vec<FoldOutcome>> = if parallel {
        (0..plan.k).into_par_iter().map(run_fold).collect()
    } else {
        (0..plan.k).map(run_fold).collect()
    };
    let mut folds = outcomes?;
    folds.sort_by_key(|f| f.fold);

    let mut summed = ConfusionMatrix::new(dataset.class_names.clone());
    for f in &folds {
        summed.add(&f.confusion);
    }
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(CrossValResult { folds, mean_accuracy, summed_confusion: summed })
}

fn annotate_fold(e: Error, fold: usize) -> Error {
    match e {
        Error::Divergence { epoch, batch } => Error::InvalidConfig(format!(
            "training diverged in fold {fold}: non-finite loss at epoch {epoch}, batch {batch}"
        )),
        other => other,
    }
}

/// Metrics CSV: one row per (fold, epoch) with loss and train accuracy.
pub fn metrics_csv(rows: &[(usize, &[EpochStats])]) -> String {
    let mut out = String::from("fold,epoch,loss,accuracy\n");
    for (fold, stats) in rows {
        for s in *stats {
            writeln!(out, "{fold},{},{},{}", s.epoch, s.mean_loss, s.train_accuracy).unwrap();
        }
    }
    out
}
