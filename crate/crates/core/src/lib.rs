//! Clustering of I/Q radio signals with a network pre-trained on labeled auxiliary signals.
//!
//! A small CNN maps each I/Q record to a non-negative unit vector with one
//! entry per cluster. Training compares records pairwise through cosine
//! similarity:
//!
//! 1. **Pre-training** on a labeled auxiliary set, where same-class pairs
//!    are positives and all other pairs negatives ([`trainer::pretrain`]).
//! 2. **Fine-tuning** on the unlabeled target set, where pairs above an
//!    upper similarity threshold become positives, pairs below a lower
//!    threshold become negatives, and the rest are ignored
//!    ([`trainer::finetune_cluster`]).
//!
//! Each record's cluster is the argmax of its feature vector. The
//! [`metrics`] module scores partitions (NMI, ARI, best-mapping accuracy)
//! and provides the K-means baseline.
//!
//! Runnable walkthroughs live in `examples/`; the `dtc` binary wraps the
//! same pipeline in the [`cli`] subcommands.

pub mod cli;
pub mod dataset;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod trainer;

pub use dataset::{SignalDataset, SignalRecord};
pub use metrics::MetricReport;
pub use nn::{FeatureMatrix, ModelState};
pub use trainer::{ClusterResult, TrainConfig};
