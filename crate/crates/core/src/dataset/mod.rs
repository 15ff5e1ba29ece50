//! Signal records, datasets and the preprocessing applied before training.
//!
//! Samples are held as `f32`, the precision of the on-disk format, and are
//! widened to `f64` only when a batch tensor is assembled for the network.

mod neutral;
mod synth;

pub use neutral::{load_neutral, read_neutral, save_neutral, write_neutral, MAGIC, VERSION};
pub use synth::{generate_synthetic, ModulationScheme, SchemeKind};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("scheme list is empty")]
    NoSchemes,
    #[error("per_class must be at least 1")]
    EmptyClass,
    #[error("signal length {length} is shorter than one symbol ({samples_per_symbol} samples)")]
    LengthTooShort {
        length: usize,
        samples_per_symbol: usize,
    },
    #[error("unknown modulation scheme `{0}`")]
    UnknownScheme(String),
    #[error("lengths must be positive (source {source_len}, target {target_len})")]
    NonPositiveLength { source_len: usize, target_len: usize },
    #[error("I/Q buffer of {0} samples does not hold two equal rows")]
    OddBuffer(usize),
    #[error("category count must be at least 1")]
    ZeroCategories,
    #[error("batch size {0} is below 2; pairwise losses need an off-diagonal pair")]
    BatchTooSmall(usize),
    #[error("dataset is not labeled")]
    Unlabeled,
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("class {class} is out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("version mismatch: file has version {found}, reader supports {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("header declares {declared} records but the body holds {actual}")]
    CountMismatch { declared: usize, actual: usize },
    #[error("class name is not valid UTF-8")]
    BadClassName,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One radio signal: an I row followed by a Q row, `2 * L` samples in total.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub iq: Vec<f32>,
    pub label: Option<usize>,
    pub snr_db: Option<i16>,
    /// Position of the record in the collection it was generated in or loaded from.
    pub source_id: u64,
}

impl SignalRecord {
    pub fn len(&self) -> usize {
        self.iq.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.iq.is_empty()
    }

    pub fn i(&self) -> &[f32] {
        &self.iq[..self.len()]
    }

    pub fn q(&self) -> &[f32] {
        &self.iq[self.len()..]
    }

    /// Mean of `I^2 + Q^2` over the record.
    pub fn average_power(&self) -> f64 {
        let sum: f64 = self.iq.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        sum / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset {
    pub records: Vec<SignalRecord>,
    pub class_names: Vec<String>,
    pub signal_length: usize,
    pub labeled: bool,
}

impl SignalDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Labels of every record, or `None` if any record is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Checks every structural invariant of the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.signal_length == 0 {
            return Err(DatasetError::NonPositiveLength {
                source_len: 0,
                target_len: 0,
            });
        }
        for (index, record) in self.records.iter().enumerate() {
            let invalid = |reason: String| DatasetError::InvalidRecord { index, reason };
            if record.iq.len() != 2 * self.signal_length {
                return Err(invalid(format!(
                    "holds {} samples, expected {}",
                    record.iq.len(),
                    2 * self.signal_length
                )));
            }
            if record.iq.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite sample".into()));
            }
            match record.label {
                Some(label) if label >= self.num_classes() => {
                    return Err(invalid(format!(
                        "label {label} out of range for {} classes",
                        self.num_classes()
                    )))
                }
                None if self.labeled => return Err(invalid("missing label in a labeled dataset".into())),
                _ => {}
            }
        }
        Ok(())
    }

    /// Stacks the selected records into an `m x 2 x L` tensor.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor {
        let l = self.signal_length;
        let mut data = Vec::with_capacity(indices.len() * 2 * l);
        for &i in indices {
            data.extend(self.records[i].iq.iter().map(|&v| f64::from(v)));
        }
        Tensor::from_vec(vec![indices.len(), 2, l], data)
    }

    /// Resamples every record to `target_len` with [`adjust_length`].
    pub fn adjust_length(&self, target_len: usize) -> Result<SignalDataset> {
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(SignalRecord {
                    iq: adjust_length(&r.iq, target_len)?,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SignalDataset {
            records,
            class_names: self.class_names.clone(),
            signal_length: target_len,
            labeled: self.labeled,
        })
    }

    /// Returns an index permutation split into `(train, validation)`.
    pub fn split_indices(&self, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * val_fraction).round() as usize;
        let n_val = n_val.min(self.len().saturating_sub(1));
        let val = order.split_off(self.len() - n_val);
        (order, val)
    }
}

/// Resamples one channel to `target_len` samples.
///
/// Shorter inputs are tiled and truncated, longer inputs are decimated by
/// taking sample `floor(j * src / target)` for output position `j`.
pub fn adjust_channel<T: Copy>(channel: &[T], target_len: usize) -> Result<Vec<T>> {
    let src = channel.len();
    if src == 0 || target_len == 0 {
        return Err(DatasetError::NonPositiveLength {
            source_len: src,
            target_len,
        });
    }
    Ok(match src.cmp(&target_len) {
        std::cmp::Ordering::Equal => channel.to_vec(),
        std::cmp::Ordering::Less => (0..target_len).map(|j| channel[j % src]).collect(),
        std::cmp::Ordering::Greater => (0..target_len).map(|j| channel[j * src / target_len]).collect(),
    })
}

/// Applies [`adjust_channel`] to both rows of an I/Q buffer.
pub fn adjust_length<T: Copy>(iq: &[T], target_len: usize) -> Result<Vec<T>> {
    if iq.len() % 2 != 0 {
        return Err(DatasetError::OddBuffer(iq.len()));
    }
    let (i, q) = iq.split_at(iq.len() / 2);
    let mut out = adjust_channel(i, target_len)?;
    out.extend(adjust_channel(q, target_len)?);
    Ok(out)
}

/// Keeps `k` randomly chosen classes when the dataset has more than `k`.
///
/// Surviving classes are relabeled `0..k` in ascending original order. A
/// dataset with `k` or fewer classes is returned unchanged.
pub fn select_categories(ds: &SignalDataset, k: usize, seed: u64) -> Result<SignalDataset> {
    if k < 1 {
        return Err(DatasetError::ZeroCategories);
    }
    if !ds.labeled {
        return Err(DatasetError::Unlabeled);
    }
    if ds.num_classes() <= k {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, ds.num_classes(), k).into_vec();
    chosen.sort_unstable();
    retain_classes(ds, &chosen)
}

/// Keeps only records of `classes` and relabels them by ascending original class.
pub fn retain_classes(ds: &SignalDataset, classes: &[usize]) -> Result<SignalDataset> {
    if !ds.labeled {
        return Err(DatasetError::Unlabeled);
    }
    let mut kept: Vec<usize> = classes.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if let Some(&bad) = kept.iter().find(|&&c| c >= ds.num_classes()) {
        return Err(DatasetError::ClassOutOfRange {
            class: bad,
            num_classes: ds.num_classes(),
        });
    }
    let remap = |label: usize| kept.binary_search(&label).ok();
    let records = ds
        .records
        .iter()
        .filter_map(|r| {
            let new_label = remap(r.label?)?;
            Some(SignalRecord {
                label: Some(new_label),
                ..r.clone()
            })
        })
        .collect();
    Ok(SignalDataset {
        records,
        class_names: kept.iter().map(|&c| ds.class_names[c].clone()).collect(),
        signal_length: ds.signal_length,
        labeled: true,
    })
}

/// Partitions a seeded permutation of `0..n` into consecutive blocks of `m`.
pub fn make_batches(n: usize, m: usize, seed: u64, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if m < 2 {
        return Err(DatasetError::BatchTooSmall(m));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(m)
        .filter(|chunk| !drop_last || chunk.len() == m)
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(classes: usize, per_class: usize) -> SignalDataset {
        let records = (0..classes * per_class)
            .map(|i| SignalRecord {
                iq: vec![i as f32; 8],
                label: Some(i / per_class),
                snr_db: Some(10),
                source_id: i as u64,
            })
            .collect();
        SignalDataset {
            records,
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            signal_length: 4,
            labeled: true,
        }
    }

    #[test]
    fn expands_by_tiling() {
        let out: String = adjust_channel(&['a', 'b', 'b'], 8).unwrap().into_iter().collect();
        assert_eq!(out, "abbabbab");
    }

    #[test]
    fn compresses_by_floor_index() {
        let src: Vec<u32> = (0..8).collect();
        assert_eq!(adjust_channel(&src, 4).unwrap(), vec![0, 2, 4, 6]);
        assert_eq!(adjust_channel(&src, 8).unwrap(), src);
    }

    #[test]
    fn adjusts_both_rows() {
        let iq = [1, 2, 3, 10, 20, 30];
        assert_eq!(adjust_length(&iq, 5).unwrap(), vec![1, 2, 3, 1, 2, 10, 20, 30, 10, 20]);
        assert!(matches!(adjust_length(&iq, 0), Err(DatasetError::NonPositiveLength { .. })));
        assert!(matches!(adjust_length(&[1, 2, 3], 2), Err(DatasetError::OddBuffer(3))));
    }

    #[test]
    fn select_keeps_small_datasets() {
        let ds = toy(3, 2);
        assert_eq!(select_categories(&ds, 10, 0).unwrap(), ds);
        let ds = toy(10, 1);
        assert_eq!(select_categories(&ds, 10, 0).unwrap(), ds);
        assert!(matches!(select_categories(&ds, 0, 0), Err(DatasetError::ZeroCategories)));
    }

    #[test]
    fn retain_relabels_in_ascending_order() {
        let ds = toy(4, 2);
        let out = retain_classes(&ds, &[3, 1]).unwrap();
        assert_eq!(out.labels().unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(out.class_names, vec!["c1", "c3"]);
        assert_eq!(out.records[0].source_id, 2);
        assert_eq!(out.records[2].source_id, 6);
    }

    #[test]
    fn select_reduces_to_k_contiguous_labels() {
        let ds = toy(6, 3);
        let out = select_categories(&ds, 2, 7).unwrap();
        assert_eq!(out.num_classes(), 2);
        assert_eq!(out.len(), 6);
        let mut labels = out.labels().unwrap();
        labels.dedup();
        assert_eq!(labels, vec![0, 1]);
        assert_eq!(select_categories(&ds, 2, 7).unwrap(), out);
    }

    #[test]
    fn batches_partition_indices() {
        let batches = make_batches(10, 5, 3, false).unwrap();
        assert_eq!(batches.len(), 2);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let batches = make_batches(10, 4, 3, true).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 8);

        assert_eq!(make_batches(10, 4, 9, false).unwrap(), make_batches(10, 4, 9, false).unwrap());
        assert!(matches!(make_batches(10, 1, 0, false), Err(DatasetError::BatchTooSmall(1))));
    }

    #[test]
    fn validate_flags_bad_records() {
        let mut ds = toy(2, 2);
        ds.validate().unwrap();
        ds.records[1].label = Some(5);
        assert!(ds.validate().is_err());
        ds.records[1].label = None;
        assert!(ds.validate().is_err());
        ds.records[1].label = Some(0);
        ds.records[1].iq[0] = f32::NAN;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn split_is_seeded_partition() {
        let ds = toy(2, 10);
        let (train, val) = ds.split_indices(0.1, 4);
        assert_eq!(val.len(), 2);
        assert_eq!(train.len(), 18);
        assert_eq!(ds.split_indices(0.1, 4), (train, val));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adjust_length_contract(src in proptest::collection::vec(-100i32..100, 1..40), target in 1usize..80) {
                let out = adjust_channel(&src, target).unwrap();
                prop_assert_eq!(out.len(), target);
                if src.len() <= target {
                    prop_assert_eq!(&out[..src.len()], &src[..]);
                }
                if src.len() % target == 0 {
                    let r = src.len() / target;
                    let expected: Vec<i32> = src.iter().copied().step_by(r).collect();
                    prop_assert_eq!(out, expected);
                }
            }

            #[test]
            fn batches_cover_each_index_once(n in 0usize..60, m in 2usize..9, seed in any::<u64>(), drop_last in any::<bool>()) {
                let batches = make_batches(n, m, seed, drop_last).unwrap();
                let mut all: Vec<usize> = batches.concat();
                all.sort_unstable();
                let before = all.len();
                all.dedup();
                prop_assert_eq!(before, all.len());
                if !drop_last {
                    prop_assert_eq!(all.len(), n);
                } else {
                    prop_assert_eq!(all.len(), n - n % m);
                }
            }
        }
    }
}
