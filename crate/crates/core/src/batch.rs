//! Feature batches: the embeddings + labels + per-class weights that every
//! loss consumes.
//!
//! A batch is validated once at construction (shared dimension, labels in
//! range, finite values) so the hot loss loops can assume well-formed input.
//! Class weights default to 1; the two inverse-count modes implement the
//! balancing weights of the per-class loss, with the dataset-level variant as
//! the pipeline default and the in-batch variant available for ablations.

use crate::scalar::Real;
use crate::{Error, Result};

/// How per-class loss weights `w(c)` are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `w(c) = 1` for every class.
    Uniform,
    /// `w(c) = 1 / |S_c|` with `|S_c|` the dataset-level class count.
    InverseDatasetCount,
    /// `w(c) = 1 / m_c` with `m_c` the in-batch class count.
    InverseBatchCount,
}

impl WeightMode {
    /// Parses the configuration spelling of a weight mode.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "inverse-dataset" => Ok(WeightMode::InverseDatasetCount),
            "inverse-batch" => Ok(WeightMode::InverseBatchCount),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight mode {other:?} (expected uniform | inverse-dataset | inverse-batch)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::Uniform => "uniform",
            WeightMode::InverseDatasetCount => "inverse-dataset",
            WeightMode::InverseBatchCount => "inverse-batch",
        }
    }
}

/// A batch of embeddings with labels and per-class weights.
#[derive(Debug, Clone)]
pub struct FeatureBatch<F: Real> {
    embeddings: Vec<Vec<F>>,
    labels: Vec<usize>,
    /// One weight per class id (including classes absent from the batch).
    weights: Vec<F>,
    num_classes: usize,
    dim: usize,
}

impl<F: Real> FeatureBatch<F> {
    /// Builds a batch with uniform weights. Fails on an empty batch, mixed
    /// dimensions, out-of-range labels, or non-finite coordinates.
    pub fn new(embeddings: Vec<Vec<F>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if embeddings.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.len(),
                got: labels.len(),
            });
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument(
                "a batch needs at least one class".into(),
            ));
        }
        let dim = embeddings[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embeddings must have at least one coordinate".into(),
            ));
        }
        for (i, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.len(),
                });
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("embedding of sample {i}"),
                });
            }
        }
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes,
                });
            }
        }
        Ok(Self {
            embeddings,
            labels,
            weights: vec![F::one(); num_classes],
            num_classes,
            dim,
        })
    }

    /// Replaces the class weights with `1 / counts[c]` using dataset-level
    /// counts. Counts must cover every class and be positive for every class
    /// present in the batch.
    pub fn with_inverse_dataset_counts(mut self, counts: &[usize]) -> Result<Self> {
        if counts.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                got: counts.len(),
            });
        }
        let present = self.class_counts();
        for (c, (&n, &m)) in counts.iter().zip(&present).enumerate() {
            if m > 0 && n == 0 {
                return Err(Error::InvalidArgument(format!(
                    "class {c} present in batch but has dataset count 0"
                )));
            }
            self.weights[c] = if n == 0 {
                F::zero()
            } else {
                F::one() / F::of(n as f64)
            };
        }
        Ok(self)
    }

    /// Replaces the class weights with `1 / m_c` using in-batch counts.
    /// Classes absent from the batch get weight 0 (they contribute no terms).
    pub fn with_inverse_batch_counts(mut self) -> Self {
        for (c, &m) in self.class_counts().iter().enumerate() {
            self.weights[c] = if m == 0 {
                F::zero()
            } else {
                F::one() / F::of(m as f64)
            };
        }
        self
    }

    /// Applies a weight mode, using `dataset_counts` for the dataset-level
    /// variant.
    pub fn with_weight_mode(self, mode: WeightMode, dataset_counts: &[usize]) -> Result<Self> {
        match mode {
            WeightMode::Uniform => Ok(self),
            WeightMode::InverseDatasetCount => self.with_inverse_dataset_counts(dataset_counts),
            WeightMode::InverseBatchCount => Ok(self.with_inverse_batch_counts()),
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embeddings(&self) -> &[Vec<F>] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn weight(&self, class: usize) -> F {
        self.weights[class]
    }

    /// In-batch sample count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class id (empty vectors for absent classes).
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Class ids with at least one sample in the batch, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0)
            .map(|(c, _)| c)
            .collect()
    }
}
