//! Evaluation: split accuracies, nearest-centroid layer probes, the
//! ε-ball coverage estimator, and per-class diagnostic reports.
//!
//! Accuracy is always reported per split of the class-count profile
//! (`many` / `med` / `few`) plus a balanced accuracy, defined as the
//! unweighted mean of per-class accuracies — classes contribute equally no
//! matter how many test samples they have. Splits with no classes are
//! reported as absent rather than zero.
//!
//! The coverage estimator answers "with what probability does a ball of a
//! given radius around the empirical centroid of `n` draws from
//! `N(μ, σ²I_d)` contain μ?" by direct Monte-Carlo simulation. Because
//! `n·‖μ̂−μ‖²/σ²` is chi-square with `d` degrees of freedom, the closed form
//! `CDF_χ²(d)(n·r²/σ²)` serves as an independent oracle
//! ([`chi_square_coverage`]).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{LongTailDataset, Split};
use crate::epsilon::EpsilonPolicy;
use crate::model::Network;
use crate::scalar::Real;
use crate::{Error, Result};

/// Accuracy per class-count split. A split with no classes (or no test
/// samples) is `None`; `balanced` is the unweighted mean over all classes
/// that have at least one test sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitAccuracy {
    pub many: Option<f64>,
    pub med: Option<f64>,
    pub few: Option<f64>,
    pub balanced: f64,
}

/// Monte-Carlo coverage estimate with its binomial standard error.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoverageEstimate {
    pub p_hat: f64,
    pub trials: usize,
    pub stderr: f64,
}

/// Per-split accuracy from already-computed predictions. `splits[c]` gives
/// the split of class `c`; labels index into it.
pub fn split_accuracy(
    predictions: &[usize],
    labels: &[usize],
    splits: &[Split],
) -> Result<SplitAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = splits.len();
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes: classes,
            });
        }
        total[l] += 1;
        if p == l {
            correct[l] += 1;
        }
    }

    let mean_over = |keep: &dyn Fn(usize) -> bool| -> Option<f64> {
        let accs: Vec<f64> = (0..classes)
            .filter(|&c| total[c] > 0 && keep(c))
            .map(|c| correct[c] as f64 / total[c] as f64)
            .collect();
        if accs.is_empty() {
            None
        } else {
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        }
    };

    let balanced = mean_over(&|_| true).ok_or(Error::EmptyBatch)?;
    Ok(SplitAccuracy {
        many: mean_over(&|c| splits[c] == Split::Many),
        med: mean_over(&|c| splits[c] == Split::Medium),
        few: mean_over(&|c| splits[c] == Split::Few),
        balanced,
    })
}

/// Argmax classification by the network's logits; ties go to the lowest
/// class id.
pub fn classify<F: Real>(network: &Network<F>, inputs: &[Vec<F>]) -> Result<Vec<usize>> {
    let fwd = network.forward(inputs)?;
    Ok(fwd.logits.iter().map(|row| argmax(row)).collect())
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Index of the closest centroid to `point`; ties go to the lowest class id.
pub fn nearest_centroid<F: Real>(point: &[F], centroids: &[Vec<F>]) -> Result<usize> {
    if centroids.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut best = 0;
    let mut best_d = crate::geometry::euclidean_distance(point, &centroids[0])?;
    for (c, m) in centroids.iter().enumerate().skip(1) {
        let d = crate::geometry::euclidean_distance(point, m)?;
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    Ok(best)
}

/// Nearest-centroid predictions at one probe layer: per-class centroids are
/// computed from the training set's activations at that layer, then each
/// test sample is assigned to its closest centroid.
pub fn nearest_centroid_probe_predictions<F: Real>(
    network: &Network<F>,
    dataset: &LongTailDataset<F>,
    layer: usize,
) -> Result<Vec<usize>> {
    if layer >= network.num_probe_layers() {
        return Err(Error::InvalidArgument(format!(
            "probe layer {layer} out of range ({} layers)",
            network.num_probe_layers()
        )));
    }
    let train_acts = network.layer_activations(&dataset.train_inputs)?;
    let acts = &train_acts[layer];
    let width = acts[0].len();
    let classes = dataset.num_classes();
    let mut centroids = vec![vec![F::zero(); width]; classes];
    let mut counts = vec![0usize; classes];
    for (a, &l) in acts.iter().zip(&dataset.train_labels) {
        for (c, &v) in centroids[l].iter_mut().zip(a) {
            *c += v;
        }
        counts[l] += 1;
    }
    for (c, centroid) in centroids.iter_mut().enumerate() {
        if counts[c] == 0 {
            return Err(Error::MissingCentroid { class: c });
        }
        let inv = F::one() / F::of(counts[c] as f64);
        for v in centroid.iter_mut() {
            *v *= inv;
        }
    }
    let test_acts = network.layer_activations(&dataset.test_inputs)?;
    test_acts[layer]
        .iter()
        .map(|a| nearest_centroid(a, &centroids))
        .collect()
}

/// Split accuracies of the nearest-centroid classifier at one probe layer.
pub fn nearest_centroid_probe<F: Real>(
    network: &Network<F>,
    dataset: &LongTailDataset<F>,
    layer: usize,
) -> Result<SplitAccuracy> {
    let preds = nearest_centroid_probe_predictions(network, dataset, layer)?;
    split_accuracy(&preds, &dataset.test_labels, &dataset.splits())
}

/// Probe accuracies for every layer, shallow to deep
/// (hidden layers, then the embedding, then the logits).
pub fn probe_all_layers<F: Real>(
    network: &Network<F>,
    dataset: &LongTailDataset<F>,
) -> Result<Vec<SplitAccuracy>> {
    (0..network.num_probe_layers())
        .map(|layer| nearest_centroid_probe(network, dataset, layer))
        .collect()
}

/// Monte-Carlo estimate of the probability that a radius-`radius` ball
/// around the empirical centroid of `n` draws from `N(0, σ²I_d)` contains
/// the true mean. Each trial literally draws the `n` points and averages
/// them.
pub fn estimate_coverage(
    n: usize,
    sigma: f64,
    dim: usize,
    radius: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "coverage needs n >= 1 and dim >= 1".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma { got: sigma });
    }
    if !(radius >= 0.0) {
        return Err(Error::NegativeRadius { got: radius });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut centroid = vec![0.0f64; dim];
    for _ in 0..trials {
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for _ in 0..n {
            for c in centroid.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *c += sigma * g;
            }
        }
        let norm_sq: f64 = centroid.iter().map(|c| (c / n as f64).powi(2)).sum();
        if norm_sq.sqrt() <= radius {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / trials as f64;
    Ok(CoverageEstimate {
        p_hat,
        trials,
        stderr: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
    })
}

/// Closed-form coverage: `n·‖μ̂‖²/σ²` is chi-square with `dim` degrees of
/// freedom, so the coverage probability is `CDF_χ²(dim)(n·radius²/σ²)`.
pub fn chi_square_coverage(n: usize, sigma: f64, dim: usize, radius: f64) -> Result<f64> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "coverage needs n >= 1 and dim >= 1".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma { got: sigma });
    }
    if !(radius >= 0.0) {
        return Err(Error::NegativeRadius { got: radius });
    }
    let dist = ChiSquared::new(dim as f64)
        .map_err(|e| Error::InvalidArgument(format!("chi-square setup: {e}")))?;
    Ok(dist.cdf(n as f64 * radius * radius / (sigma * sigma)))
}

/// One class's train/test error pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorGapRow {
    pub class: usize,
    pub count: usize,
    pub train_error: f64,
    pub test_error: f64,
}

/// Per-class train vs. test error, sorted by training count (most frequent
/// first; ties by class id).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorGapReport {
    pub rows: Vec<ErrorGapRow>,
}

impl ErrorGapReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,train_error,test_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.class, r.count, r.train_error, r.test_error
            ));
        }
        out
    }
}

/// Classifies both splits of the dataset and reports per-class errors.
pub fn error_gap_report<F: Real>(
    network: &Network<F>,
    dataset: &LongTailDataset<F>,
) -> Result<ErrorGapReport> {
    let classes = dataset.num_classes();
    let per_class_error = |preds: &[usize], labels: &[usize]| -> Vec<f64> {
        let mut correct = vec![0usize; classes];
        let mut total = vec![0usize; classes];
        for (&p, &l) in preds.iter().zip(labels) {
            total[l] += 1;
            if p == l {
                correct[l] += 1;
            }
        }
        (0..classes)
            .map(|c| 1.0 - correct[c] as f64 / total[c].max(1) as f64)
            .collect()
    };
    let train_preds = classify(network, &dataset.train_inputs)?;
    let test_preds = classify(network, &dataset.test_inputs)?;
    let train_err = per_class_error(&train_preds, &dataset.train_labels);
    let test_err = per_class_error(&test_preds, &dataset.test_labels);
    let counts = dataset.class_counts();
    let mut rows: Vec<ErrorGapRow> = (0..classes)
        .map(|c| ErrorGapRow {
            class: c,
            count: counts[c],
            train_error: train_err[c],
            test_error: test_err[c],
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.class.cmp(&b.class)));
    Ok(ErrorGapReport { rows })
}

/// One class's radius entry.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpsilonRow {
    pub class: usize,
    pub count: usize,
    pub epsilon: f64,
}

/// Per-class uncertainty radii plus the Spearman rank correlation between
/// class count and radius (`None` when either side is constant).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpsilonReport {
    pub rows: Vec<EpsilonRow>,
    pub spearman: Option<f64>,
}

impl EpsilonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,epsilon\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6e}\n", r.class, r.count, r.epsilon));
        }
        out
    }
}

/// Tabulates the policy's radii against the class counts.
pub fn epsilon_report<F: Real>(
    policy: &EpsilonPolicy<F>,
    class_counts: &[usize],
) -> Result<EpsilonReport> {
    if policy.num_classes() != class_counts.len() {
        return Err(Error::DimensionMismatch {
            expected: class_counts.len(),
            got: policy.num_classes(),
        });
    }
    let eps = policy.all_epsilons();
    let rows: Vec<EpsilonRow> = class_counts
        .iter()
        .enumerate()
        .map(|(c, &n)| EpsilonRow {
            class: c,
            count: n,
            epsilon: eps[c].as_f64(),
        })
        .collect();
    let counts_f: Vec<f64> = class_counts.iter().map(|&n| n as f64).collect();
    let eps_f: Vec<f64> = eps.iter().map(|e| e.as_f64()).collect();
    Ok(EpsilonReport {
        rows,
        spearman: spearman(&counts_f, &eps_f),
    })
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two points or either sequence is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}
