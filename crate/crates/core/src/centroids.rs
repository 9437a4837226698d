//! Per-class centroid bank.
//!
//! Centroids are *frozen between recomputations*: the training loop rebuilds
//! the bank from a full forward pass at every epoch boundary and treats the
//! stored means as constants inside the epoch. The bank also tracks per-class
//! counts and spreads (mean distance to the centroid) because both feed
//! diagnostics and the sqrt-n radius policy.

use crate::batch::FeatureBatch;
use crate::geometry::euclidean_distance;
use crate::scalar::Real;
use crate::{Error, Result};

/// Statistics stored for one class.
#[derive(Debug, Clone)]
pub struct ClassStats<F: Real> {
    /// Exact arithmetic mean of the class embeddings.
    pub centroid: Vec<F>,
    /// Number of samples the centroid was computed from.
    pub count: usize,
    /// Mean distance of the class samples to the centroid.
    pub spread: F,
}

/// Snapshot of per-class centroids taken at a specific epoch.
#[derive(Debug, Clone)]
pub struct CentroidBank<F: Real> {
    stats: Vec<Option<ClassStats<F>>>,
    epoch_stamp: usize,
    dim: usize,
}

impl<F: Real> CentroidBank<F> {
    /// Computes exact per-class means, counts, and spreads from `features`,
    /// stamping the snapshot with `epoch`. Classes absent from `features`
    /// stay empty and [`CentroidBank::get`] reports them as missing.
    pub fn recompute(features: &FeatureBatch<F>, epoch: usize) -> Result<Self> {
        let dim = features.dim();
        let mut stats: Vec<Option<ClassStats<F>>> = vec![None; features.num_classes()];
        for (class, idx) in features.indices_by_class().into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let mut centroid = vec![F::zero(); dim];
            for &i in &idx {
                for (acc, &x) in centroid.iter_mut().zip(&features.embeddings()[i]) {
                    *acc += x;
                }
            }
            let n = F::of(idx.len() as f64);
            for acc in &mut centroid {
                *acc /= n;
            }
            let mut spread = F::zero();
            for &i in &idx {
                spread += euclidean_distance(&centroid, &features.embeddings()[i])?;
            }
            spread /= n;
            stats[class] = Some(ClassStats {
                centroid,
                count: idx.len(),
                spread,
            });
        }
        Ok(Self {
            stats,
            epoch_stamp: epoch,
            dim,
        })
    }

    /// Builds a bank directly from known centroids (used by tests and by the
    /// bound diagnostics, where centroids are inputs rather than estimates).
    pub fn from_centroids(centroids: Vec<Vec<F>>, counts: Vec<usize>, epoch: usize) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::InvalidArgument("no centroids given".into()));
        }
        if centroids.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: centroids.len(),
                got: counts.len(),
            });
        }
        let dim = centroids[0].len();
        let mut stats = Vec::with_capacity(centroids.len());
        for (centroid, &count) in centroids.into_iter().zip(&counts) {
            if centroid.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: centroid.len(),
                });
            }
            if centroid.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: "centroid".into(),
                });
            }
            stats.push(Some(ClassStats {
                centroid,
                count,
                spread: F::zero(),
            }));
        }
        Ok(Self {
            stats,
            epoch_stamp: epoch,
            dim,
        })
    }

    /// Stats for `class`; an error if the class had no samples.
    pub fn get(&self, class: usize) -> Result<&ClassStats<F>> {
        self.stats
            .get(class)
            .and_then(|s| s.as_ref())
            .ok_or(Error::MissingCentroid { class })
    }

    /// Centroid coordinates for `class`.
    pub fn centroid(&self, class: usize) -> Result<&[F]> {
        Ok(&self.get(class)?.centroid)
    }

    pub fn num_classes(&self) -> usize {
        self.stats.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Epoch the snapshot was taken at.
    pub fn epoch_stamp(&self) -> usize {
        self.epoch_stamp
    }

    /// Class ids that have a centroid, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        self.stats
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(c, _)| c)
            .collect()
    }

    /// Dataset-level class counts as recorded in the bank (0 for absent).
    pub fn counts(&self) -> Vec<usize> {
        self.stats
            .iter()
            .map(|s| s.as_ref().map_or(0, |s| s.count))
            .collect()
    }

    /// CSV snapshot: `class,count,spread,c0,..,c{d-1}`, one row per class with
    /// a centroid, ascending class order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,spread");
        for j in 0..self.dim {
            out.push_str(&format!(",c{j}"));
        }
        out.push('\n');
        for (class, s) in self.stats.iter().enumerate() {
            let Some(s) = s else { continue };
            out.push_str(&format!("{class},{},{}", s.count, s.spread));
            for x in &s.centroid {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}
