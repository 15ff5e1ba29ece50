//! Supervised pairwise pre-training and self-labeled clustering.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{make_batches, DatasetError, SignalDataset};
use crate::losses::{
    pairs_from_labels, pairs_from_similarity, pairwise_loss, similarity_backward, similarity_matrix, LossError,
    PairMatrices,
};
use crate::metrics::{evaluate, MetricReport, MetricsError};
use crate::nn::{FeatureMatrix, ModelState, NnError};

/// Minimum drop in validation loss that resets the patience counter.
pub const VAL_IMPROVEMENT: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("auxiliary dataset must be labeled")]
    Unlabeled,
    #[error("dataset declares {dataset} classes but the model has {model} outputs")]
    ClassMismatch { dataset: usize, model: usize },
    #[error("dataset signal length {dataset} does not match model input length {model}")]
    LengthMismatch { dataset: usize, model: usize },
    #[error("non-finite loss during {stage} epoch {epoch}")]
    NonFiniteLoss { stage: Stage, epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_pretrain: f64,
    pub lambda_finetune: f64,
    pub u: f64,
    pub l: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub stop_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_pretrain: 0.1,
            lambda_finetune: 100.0,
            u: 0.95,
            l: 0.7,
            batch_size: 64,
            lr: 1e-3,
            max_epochs: 30,
            patience: 5,
            val_fraction: 0.1,
            stop_delta: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(0.0 <= self.l && self.l < self.u && self.u <= 1.0) {
            return fail(format!("thresholds need 0 <= l < u <= 1 (u={}, l={})", self.u, self.l));
        }
        if self.batch_size < 2 {
            return fail(format!("batch size {} is below 2", self.batch_size));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction {} is outside (0, 1)", self.val_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        for (name, lambda) in [("lambda_pretrain", self.lambda_pretrain), ("lambda_finetune", self.lambda_finetune)] {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return fail(format!("{name} {lambda} must be non-negative"));
            }
        }
        if !(self.stop_delta >= 0.0) {
            return fail(format!("stop_delta {} must be non-negative", self.stop_delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Pair-weighted mean training loss over the epoch's batches.
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub selected_pair_fraction: f64,
    pub skipped_batches: usize,
    pub changed_fraction: Option<f64>,
    pub metrics: Option<MetricReport>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} stage={} loss={:.6} selected={:.4}",
            self.epoch, self.stage, self.loss, self.selected_pair_fraction
        )?;
        if let Some(v) = self.val_loss {
            write!(f, " val_loss={v:.6}")?;
        }
        if let Some(c) = self.changed_fraction {
            write!(f, " changed={c:.4}")?;
        }
        if self.skipped_batches > 0 {
            write!(f, " skipped={}", self.skipped_batches)?;
        }
        if let Some(m) = &self.metrics {
            write!(f, " nmi={:.4} ari={:.4} acc={:.4}", m.nmi, m.ari, m.acc)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Parameters from the epoch with the lowest validation loss (epoch 0 is
    /// the initialization).
    pub model: ModelState,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the model as passed in.
    pub initial_val_loss: Option<f64>,
    pub epochs_run: usize,
    pub log: Vec<EpochRecord>,
}

impl PretrainOutcome {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// Eval-mode features of every target record.
    pub features: FeatureMatrix,
    pub epochs_run: usize,
    pub final_loss: f64,
    /// Selected over all off-diagonal pairs, aggregated over the last epoch.
    pub selected_pair_fraction: f64,
    pub log: Vec<EpochRecord>,
    pub model: ModelState,
}

/// Index of the largest entry per row, lowest index on ties.
pub fn assign_labels(features: &FeatureMatrix) -> Vec<usize> {
    features
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Eval-mode features for every record, in record order.
pub fn embed(model: &ModelState, ds: &SignalDataset) -> Result<FeatureMatrix> {
    let all: Vec<usize> = (0..ds.len()).collect();
    Ok(model.forward_eval(&ds.batch_tensor(&all))?)
}

fn epoch_seed(seed: u64, stage: Stage, epoch: usize) -> u64 {
    // splitmix64 finalizer over (seed, stage, epoch)
    let mut z = seed ^ ((stage as u64) << 56) ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct StepOutcome {
    loss: f64,
    selected: usize,
    pairs: usize,
}

/// Forward, loss, backward and Adam update for one batch. Batches without a
/// selected pair are not applied.
fn train_step(
    model: &mut ModelState,
    ds: &SignalDataset,
    indices: &[usize],
    lambda: f64,
    lr: f64,
    pairs_for: impl FnOnce(&crate::losses::SimilarityMatrix) -> Result<PairMatrices>,
) -> Result<Option<StepOutcome>> {
    let batch = ds.batch_tensor(indices);
    let (features, trace) = model.forward_train(&batch)?;
    let sim = similarity_matrix(&features)?;
    let pairs = pairs_for(&sim)?;
    let out = pairwise_loss(&sim, &pairs, lambda)?;
    let total_pairs = pairs.off_diagonal_pairs();
    if out.selected == 0 {
        return Ok(None);
    }
    if !out.loss.is_finite() {
        return Ok(Some(StepOutcome {
            loss: out.loss,
            selected: out.selected,
            pairs: total_pairs,
        }));
    }
    let d_features = similarity_backward(&features, &out.grad);
    let grads = model.backward(&trace, &d_features)?;
    model.adam_step(&grads, lr)?;
    Ok(Some(StepOutcome {
        loss: out.loss,
        selected: out.selected,
        pairs: total_pairs,
    }))
}

/// Pair-weighted mean supervised loss over `indices`, eval mode, in chunks
/// of `batch_size`.
fn labeled_loss(model: &ModelState, ds: &SignalDataset, indices: &[usize], batch_size: usize, lambda: f64) -> Result<Option<f64>> {
    let (mut total, mut weight) = (0.0, 0usize);
    for chunk in indices.chunks(batch_size).filter(|c| c.len() >= 2) {
        let features = model.forward_eval(&ds.batch_tensor(chunk))?;
        let sim = similarity_matrix(&features)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.records[i].label.expect("labeled")).collect();
        let out = pairwise_loss(&sim, &pairs_from_labels(&labels, model.num_classes())?, lambda)?;
        total += out.loss * out.selected as f64;
        weight += out.selected;
    }
    Ok((weight > 0).then(|| total / weight as f64))
}

/// Supervised pairwise training on a labeled auxiliary set with early
/// stopping on validation loss.
///
/// The validation split is a seeded shuffle of `cfg.val_fraction` of the
/// records. When it holds fewer than two records the training loss drives
/// stopping instead.
pub fn pretrain(model: ModelState, aux: &SignalDataset, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if !aux.labeled || aux.labels().is_none() {
        return Err(TrainError::Unlabeled);
    }
    if aux.num_classes() > model.num_classes() {
        return Err(TrainError::ClassMismatch {
            dataset: aux.num_classes(),
            model: model.num_classes(),
        });
    }
    if aux.signal_length != model.signal_length() {
        return Err(TrainError::LengthMismatch {
            dataset: aux.signal_length,
            model: model.signal_length(),
        });
    }
    let k = model.num_classes();
    let (train_idx, val_idx) = aux.split_indices(cfg.val_fraction, cfg.seed);
    let lambda = cfg.lambda_pretrain;

    let mut model = model;
    let initial = labeled_loss(&model, aux, &val_idx, cfg.batch_size, lambda)?;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut best_val = initial.unwrap_or(f64::INFINITY);
    let mut patience_ref = best_val;
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(train_idx.len(), cfg.batch_size, epoch_seed(cfg.seed, Stage::Pretrain, epoch), false)?;
        let (mut loss_sum, mut selected, mut pairs) = (0.0, 0usize, 0usize);
        for batch in batches.iter().filter(|b| b.len() >= 2) {
            let indices: Vec<usize> = batch.iter().map(|&i| train_idx[i]).collect();
            let labels: Vec<usize> = indices.iter().map(|&i| aux.records[i].label.expect("labeled")).collect();
            let step = train_step(&mut model, aux, &indices, lambda, cfg.lr, |_| Ok(pairs_from_labels(&labels, k)?))?;
            if let Some(step) = step {
                if !step.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        stage: Stage::Pretrain,
                        epoch,
                    });
                }
                loss_sum += step.loss * step.selected as f64;
                selected += step.selected;
                pairs += step.pairs;
            }
        }
        let train_loss = if selected > 0 { loss_sum / selected as f64 } else { 0.0 };
        let val_loss = labeled_loss(&model, aux, &val_idx, cfg.batch_size, lambda)?;
        log.push(EpochRecord {
            stage: Stage::Pretrain,
            epoch,
            loss: train_loss,
            val_loss,
            selected_pair_fraction: if pairs > 0 { selected as f64 / pairs as f64 } else { 0.0 },
            skipped_batches: 0,
            changed_fraction: None,
            metrics: None,
        });

        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best_val {
            best_val = monitored;
            best_epoch = epoch;
            best_model = model.clone();
        }
        if monitored < patience_ref - VAL_IMPROVEMENT {
            patience_ref = monitored;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(PretrainOutcome {
        model: best_model,
        best_epoch,
        best_val_loss: best_val,
        initial_val_loss: initial,
        epochs_run: log.len(),
        log,
    })
}

/// Self-labeled fine-tuning on the target set, then cluster assignment.
///
/// Each batch's pairs are labeled by thresholding the similarity matrix at
/// `cfg.u` / `cfg.l`. Target labels, when present, only feed the per-epoch
/// metrics in the log. Training stops once fewer than `cfg.stop_delta` of
/// the assignments change between consecutive epochs.
pub fn finetune_cluster(model: ModelState, target: &SignalDataset, cfg: &TrainConfig) -> Result<ClusterResult> {
    cfg.validate()?;
    if target.signal_length != model.signal_length() {
        return Err(TrainError::LengthMismatch {
            dataset: target.signal_length,
            model: model.signal_length(),
        });
    }
    if target.num_classes() != model.num_classes() {
        return Err(TrainError::ClassMismatch {
            dataset: target.num_classes(),
            model: model.num_classes(),
        });
    }
    let k = model.num_classes();
    let truth = target.labels();
    let mut model = model;
    let mut features = embed(&model, target)?;
    let mut assignments = assign_labels(&features);
    let mut log = Vec::new();
    let (mut final_loss, mut final_fraction) = (0.0, 0.0);

    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(target.len(), cfg.batch_size, epoch_seed(cfg.seed, Stage::Finetune, epoch), false)?;
        let (mut loss_sum, mut selected, mut pairs, mut skipped) = (0.0, 0usize, 0usize, 0usize);
        for batch in batches.iter().filter(|b| b.len() >= 2) {
            pairs += batch.len() * (batch.len() - 1);
            let step = train_step(&mut model, target, batch, cfg.lambda_finetune, cfg.lr, |s| {
                Ok(pairs_from_similarity(s, cfg.u, cfg.l)?)
            })?;
            match step {
                None => skipped += 1,
                Some(step) if !step.loss.is_finite() => {
                    return Err(TrainError::NonFiniteLoss {
                        stage: Stage::Finetune,
                        epoch,
                    })
                }
                Some(step) => {
                    loss_sum += step.loss * step.selected as f64;
                    selected += step.selected;
                }
            }
        }
        final_loss = if selected > 0 { loss_sum / selected as f64 } else { 0.0 };
        final_fraction = if pairs > 0 { selected as f64 / pairs as f64 } else { 0.0 };

        features = embed(&model, target)?;
        let next = assign_labels(&features);
        let changed = next.iter().zip(&assignments).filter(|(a, b)| a != b).count() as f64 / target.len().max(1) as f64;
        assignments = next;
        let metrics = match &truth {
            Some(t) if t.len() >= 2 => Some(evaluate(t, &assignments, k)?),
            _ => None,
        };
        log.push(EpochRecord {
            stage: Stage::Finetune,
            epoch,
            loss: final_loss,
            val_loss: None,
            selected_pair_fraction: final_fraction,
            skipped_batches: skipped,
            changed_fraction: Some(changed),
            metrics,
        });
        if changed < cfg.stop_delta {
            break;
        }
    }

    Ok(ClusterResult {
        assignments,
        features,
        epochs_run: log.len(),
        final_loss,
        selected_pair_fraction: final_fraction,
        log,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_rules() {
        let f = FeatureMatrix::from_vec(3, 3, vec![0.9, 0.1, 0.42, 0.5, 0.5, 0.5, 0.1, 0.2, 0.97]);
        assert_eq!(assign_labels(&f), vec![0, 0, 2]);
        let scaled = FeatureMatrix::from_vec(3, 3, f.values().iter().map(|v| v * 3.0).collect());
        assert_eq!(assign_labels(&scaled), assign_labels(&f));
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { u: 0.5, l: 0.5, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { val_fraction: 1.0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { lambda_finetune: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    #[test]
    fn epoch_seeds_differ() {
        assert_ne!(epoch_seed(1, Stage::Pretrain, 1), epoch_seed(1, Stage::Pretrain, 2));
        assert_ne!(epoch_seed(1, Stage::Pretrain, 1), epoch_seed(1, Stage::Finetune, 1));
    }

    #[test]
    fn log_line_format() {
        let rec = EpochRecord {
            stage: Stage::Finetune,
            epoch: 2,
            loss: 0.5,
            val_loss: None,
            selected_pair_fraction: 0.25,
            skipped_batches: 1,
            changed_fraction: Some(0.1),
            metrics: Some(MetricReport { nmi: 1.0, ari: 1.0, acc: 1.0 }),
        };
        assert_eq!(
            rec.to_string(),
            "epoch=2 stage=finetune loss=0.500000 selected=0.2500 changed=0.1000 skipped=1 nmi=1.0000 ari=1.0000 acc=1.0000"
        );
    }
}
