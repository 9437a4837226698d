//! Synthetic long-tailed datasets: a Gaussian mixture whose class counts
//! decay exponentially from head to tail.
//!
//! Class `c` of `C` receives `n_c = round(n_max · β^(−c/(C−1)))` training
//! samples, so `β` is exactly the head/tail imbalance factor. Class means are
//! placed uniformly at random in a hypercube whose side is scaled so the
//! *mean* inter-centroid distance is ≈ `separation × spread`; samples are
//! isotropic Gaussians (`spread` = σ) around their class mean. The test set
//! is exactly balanced (`test_per_class` per class) so balanced accuracy is
//! an honest average.
//!
//! Datasets serialize to a versioned text format with 17-significant-digit
//! floats, which round-trip `f64` bit-exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;
use crate::{Error, Result};

/// Format version accepted by [`LongTailDataset::load`].
const FORMAT_VERSION: &str = "longtail-dataset v1";

/// Split membership by training count, thresholds fixed at 100 and 20:
/// `Many` is strictly above 100, `Few` strictly below 20, `Medium` the rest
/// (so counts of exactly 100 or 20 are `Medium`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Many,
    Medium,
    Few,
}

impl Split {
    pub fn of_count(count: usize) -> Split {
        if count > 100 {
            Split::Many
        } else if count < 20 {
            Split::Few
        } else {
            Split::Medium
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Many => "many",
            Split::Medium => "medium",
            Split::Few => "few",
        }
    }
}

/// Generation parameters for a synthetic long-tail dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataParams {
    pub classes: usize,
    pub dim: usize,
    pub n_max: usize,
    /// Head/tail imbalance factor (β ≥ 1; β = 1 is balanced).
    pub beta: f64,
    /// Within-class Gaussian scale σ.
    pub spread: f64,
    /// Target ratio of mean inter-centroid distance to `spread`.
    pub separation: f64,
    /// Balanced test-set size per class.
    pub test_per_class: usize,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            n_max: 500,
            beta: 100.0,
            spread: 1.0,
            separation: 4.0,
            test_per_class: 100,
        }
    }
}

impl DataParams {
    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes < 2 {
            problems.push("classes must be at least 2".to_string());
        }
        if self.dim == 0 {
            problems.push("dim must be positive".to_string());
        }
        if self.n_max == 0 {
            problems.push("n_max must be positive".to_string());
        }
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            problems.push(format!("beta must be a finite value >= 1, got {}", self.beta));
        }
        if !(self.spread > 0.0) || !self.spread.is_finite() {
            problems.push(format!("spread must be positive, got {}", self.spread));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            problems.push(format!(
                "separation must be positive, got {}",
                self.separation
            ));
        }
        if self.test_per_class == 0 {
            problems.push("test_per_class must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Exponentially decaying class counts `round(n_max · β^(−c/(C−1)))`.
///
/// Rejects parameters whose tail count would round below one sample.
pub fn exponential_profile(n_max: usize, beta: f64, classes: usize) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::InvalidArgument(
            "profile needs at least 2 classes".into(),
        ));
    }
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta must be a finite value >= 1, got {beta}"
        )));
    }
    let counts: Vec<usize> = (0..classes)
        .map(|c| {
            let exponent = -(c as f64) / (classes as f64 - 1.0);
            (n_max as f64 * beta.powf(exponent)).round() as usize
        })
        .collect();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {c} would receive 0 samples (n_max {n_max}, beta {beta}); \
             raise n_max or lower beta"
        )));
    }
    Ok(counts)
}

/// A synthesized long-tail classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailDataset<F: Real> {
    pub params: DataParams,
    pub seed: u64,
    /// True class means the generator used (for coverage diagnostics).
    pub true_means: Vec<Vec<F>>,
    pub train_inputs: Vec<Vec<F>>,
    pub train_labels: Vec<usize>,
    pub test_inputs: Vec<Vec<F>>,
    pub test_labels: Vec<usize>,
    counts: Vec<usize>,
}

impl<F: Real> LongTailDataset<F> {
    /// Draws a dataset. The RNG stream is consumed in a fixed order (means,
    /// then per-class training samples, then per-class test samples), so a
    /// seed pins the dataset bit-for-bit.
    pub fn synthesize(params: &DataParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let counts = exponential_profile(params.n_max, params.beta, params.classes)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);

        // For means uniform in [0, L]^d, E‖U − V‖² = d·L²/6; matching the
        // root to separation × spread gives the cube side.
        let side = params.separation * params.spread / (params.dim as f64 / 6.0).sqrt();
        let true_means: Vec<Vec<F>> = (0..params.classes)
            .map(|_| {
                (0..params.dim)
                    .map(|_| F::of(rng.random_range(0.0..side)))
                    .collect()
            })
            .collect();

        let gaussian = |mean: &Vec<F>, rng: &mut ChaCha12Rng| -> Vec<F> {
            mean.iter()
                .map(|&m| {
                    let n: f64 = rng.sample(StandardNormal);
                    m + F::of(params.spread * n)
                })
                .collect()
        };

        let total: usize = counts.iter().sum();
        let mut train_inputs = Vec::with_capacity(total);
        let mut train_labels = Vec::with_capacity(total);
        for (c, &n_c) in counts.iter().enumerate() {
            for _ in 0..n_c {
                train_inputs.push(gaussian(&true_means[c], &mut rng));
                train_labels.push(c);
            }
        }
        let mut test_inputs = Vec::with_capacity(params.classes * params.test_per_class);
        let mut test_labels = Vec::with_capacity(params.classes * params.test_per_class);
        for c in 0..params.classes {
            for _ in 0..params.test_per_class {
                test_inputs.push(gaussian(&true_means[c], &mut rng));
                test_labels.push(c);
            }
        }

        Ok(Self {
            params: params.clone(),
            seed,
            true_means,
            train_inputs,
            train_labels,
            test_inputs,
            test_labels,
            counts,
        })
    }

    /// Training-set class counts (the long-tail profile).
    pub fn class_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.params.classes
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    /// Split membership per class, by training count.
    pub fn splits(&self) -> Vec<Split> {
        self.counts.iter().map(|&n| Split::of_count(n)).collect()
    }

    /// Infinite class-balanced resampling stream over training indices:
    /// every draw picks a uniform class, then a uniform sample within it
    /// (with replacement). Deterministic for a fixed seed.
    pub fn balanced_stream(&self, seed: u64) -> BalancedStream {
        let mut by_class = vec![Vec::new(); self.params.classes];
        for (i, &l) in self.train_labels.iter().enumerate() {
            by_class[l].push(i);
        }
        BalancedStream {
            rng: ChaCha12Rng::seed_from_u64(seed),
            by_class,
        }
    }

    /// Serializes to the versioned text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(FORMAT_VERSION);
        out.push('\n');
        out.push_str(&format!("classes = {}\n", self.params.classes));
        out.push_str(&format!("dim = {}\n", self.params.dim));
        out.push_str(&format!("n_max = {}\n", self.params.n_max));
        out.push_str(&format!("beta = {:.16e}\n", self.params.beta));
        out.push_str(&format!("spread = {:.16e}\n", self.params.spread));
        out.push_str(&format!("separation = {:.16e}\n", self.params.separation));
        out.push_str(&format!("test_per_class = {}\n", self.params.test_per_class));
        out.push_str(&format!("seed = {}\n", self.seed));
        let write_row = |out: &mut String, row: &[F]| {
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:.16e}", x.as_f64()));
            }
            out.push('\n');
        };
        out.push_str(&format!("means {}\n", self.true_means.len()));
        for m in &self.true_means {
            write_row(&mut out, m);
        }
        out.push_str(&format!("train {}\n", self.train_inputs.len()));
        for (x, l) in self.train_inputs.iter().zip(&self.train_labels) {
            out.push_str(&format!("{l} "));
            write_row(&mut out, x);
        }
        out.push_str(&format!("test {}\n", self.test_inputs.len()));
        for (x, l) in self.test_inputs.iter().zip(&self.test_labels) {
            out.push_str(&format!("{l} "));
            write_row(&mut out, x);
        }
        out.push_str("end\n");
        out
    }

    /// Parses the versioned text format, reporting the offending line on
    /// failure. A missing `end` marker (truncation) is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::Parse {
                    line: text.lines().count() + 1,
                    message: format!("unexpected end of file, expected {what}"),
                })
        };

        let (line, version) = next("version header")?;
        if version.trim() != FORMAT_VERSION {
            let _ = line;
            return Err(Error::UnsupportedVersion {
                found: version.trim().to_string(),
                supported: FORMAT_VERSION,
            });
        }

        fn kv<'a>(line: usize, text: &'a str, key: &str) -> Result<&'a str> {
            let (k, v) = text.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `{key} = value`"),
            })?;
            if k.trim() != key {
                return Err(Error::Parse {
                    line,
                    message: format!("expected key {key}, found {}", k.trim()),
                });
            }
            Ok(v.trim())
        }
        fn parse<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {what} from {s:?}"),
            })
        }

        let (l, s) = next("classes")?;
        let classes: usize = parse(l, kv(l, s, "classes")?, "classes")?;
        let (l, s) = next("dim")?;
        let dim: usize = parse(l, kv(l, s, "dim")?, "dim")?;
        let (l, s) = next("n_max")?;
        let n_max: usize = parse(l, kv(l, s, "n_max")?, "n_max")?;
        let (l, s) = next("beta")?;
        let beta: f64 = parse(l, kv(l, s, "beta")?, "beta")?;
        let (l, s) = next("spread")?;
        let spread: f64 = parse(l, kv(l, s, "spread")?, "spread")?;
        let (l, s) = next("separation")?;
        let separation: f64 = parse(l, kv(l, s, "separation")?, "separation")?;
        let (l, s) = next("test_per_class")?;
        let test_per_class: usize = parse(l, kv(l, s, "test_per_class")?, "test_per_class")?;
        let (l, s) = next("seed")?;
        let seed: u64 = parse(l, kv(l, s, "seed")?, "seed")?;

        let params = DataParams {
            classes,
            dim,
            n_max,
            beta,
            spread,
            separation,
            test_per_class,
        };
        params.validate()?;

        let parse_row = |line: usize, s: &str| -> Result<Vec<F>> {
            let row: Vec<F> = s
                .split_whitespace()
                .map(|tok| {
                    parse::<f64>(line, tok, "float").map(F::of)
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {dim} coordinates, found {}", row.len()),
                });
            }
            Ok(row)
        };

        let (l, s) = next("means header")?;
        let mean_count: usize = parse(l, s.strip_prefix("means ").ok_or(Error::Parse {
            line: l,
            message: "expected `means <count>`".into(),
        })?, "mean count")?;
        if mean_count != classes {
            return Err(Error::Parse {
                line: l,
                message: format!("means count {mean_count} != classes {classes}"),
            });
        }
        let mut true_means = Vec::with_capacity(classes);
        for _ in 0..classes {
            let (l, s) = next("mean row")?;
            true_means.push(parse_row(l, s)?);
        }

        let mut read_labeled = |section: &str| -> Result<(Vec<Vec<F>>, Vec<usize>)> {
            let (l, s) = next(&format!("{section} header"))?;
            let count: usize = parse(
                l,
                s.strip_prefix(&format!("{section} ")).ok_or(Error::Parse {
                    line: l,
                    message: format!("expected `{section} <count>`"),
                })?,
                "sample count",
            )?;
            let mut inputs = Vec::with_capacity(count);
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let (l, s) = next("sample row")?;
                let (label_tok, rest) = s.split_once(' ').ok_or(Error::Parse {
                    line: l,
                    message: "expected `<label> <coords...>`".into(),
                })?;
                let label: usize = parse(l, label_tok, "label")?;
                if label >= classes {
                    return Err(Error::Parse {
                        line: l,
                        message: format!("label {label} out of range for {classes} classes"),
                    });
                }
                labels.push(label);
                inputs.push(parse_row(l, rest)?);
            }
            Ok((inputs, labels))
        };

        let (train_inputs, train_labels) = read_labeled("train")?;
        let (test_inputs, test_labels) = read_labeled("test")?;
        let (l, s) = next("end marker")?;
        if s.trim() != "end" {
            return Err(Error::Parse {
                line: l,
                message: format!("expected `end`, found {s:?}"),
            });
        }

        let mut counts = vec![0usize; classes];
        for &lb in &train_labels {
            counts[lb] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Parse {
                line: l,
                message: format!("class {c} has no training samples"),
            });
        }

        Ok(Self {
            params,
            seed,
            true_means,
            train_inputs,
            train_labels,
            test_inputs,
            test_labels,
            counts,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

/// Iterator over class-balanced training indices (see
/// [`LongTailDataset::balanced_stream`]); infinite, so always `Some`.
pub struct BalancedStream {
    rng: ChaCha12Rng,
    by_class: Vec<Vec<usize>>,
}

impl Iterator for BalancedStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let class = self.rng.random_range(0..self.by_class.len());
        let members = &self.by_class[class];
        Some(members[self.rng.random_range(0..members.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_matches_the_documented_examples() {
        // Balanced when beta = 1.
        assert_eq!(
            exponential_profile(500, 1.0, 4).unwrap(),
            vec![500, 500, 500, 500]
        );
        // 10 classes, n_max 500, beta 100: tail class gets 500/100 = 5.
        let p = exponential_profile(500, 100.0, 10).unwrap();
        assert_eq!(p[0], 500);
        assert_eq!(p[9], 5);
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "counts nonincreasing");
    }

    #[test]
    fn profile_rejects_counts_that_round_to_zero() {
        let err = exponential_profile(10, 100.0, 10).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn synthesize_is_deterministic_per_seed() {
        let params = DataParams {
            classes: 4,
            dim: 3,
            n_max: 30,
            beta: 10.0,
            ..DataParams::default()
        };
        let a: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 7).unwrap();
        let b: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 7).unwrap();
        assert_eq!(a, b);
        let c: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 8).unwrap();
        assert_ne!(a.train_inputs, c.train_inputs);
    }

    #[test]
    fn test_set_is_exactly_balanced() {
        let params = DataParams {
            classes: 5,
            dim: 2,
            n_max: 40,
            beta: 8.0,
            test_per_class: 13,
            ..DataParams::default()
        };
        let ds: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 3).unwrap();
        let mut per_class = vec![0usize; 5];
        for &l in &ds.test_labels {
            per_class[l] += 1;
        }
        assert_eq!(per_class, vec![13; 5]);
        // Train set follows the profile.
        assert_eq!(
            ds.class_counts(),
            exponential_profile(40, 8.0, 5).unwrap().as_slice()
        );
    }

    #[test]
    fn split_thresholds_put_boundaries_in_medium() {
        assert_eq!(Split::of_count(101), Split::Many);
        assert_eq!(Split::of_count(100), Split::Medium);
        assert_eq!(Split::of_count(20), Split::Medium);
        assert_eq!(Split::of_count(19), Split::Few);
        assert_eq!(Split::of_count(5), Split::Few);
    }

    #[test]
    fn mean_separation_tracks_the_knob() {
        let params = DataParams {
            classes: 12,
            dim: 16,
            n_max: 20,
            beta: 2.0,
            spread: 1.5,
            separation: 4.0,
            test_per_class: 1,
        };
        // Average over seeds: the mean pairwise centroid distance should be
        // near separation × spread (the cube side is solved from the mean
        // *squared* distance, so allow a generous band).
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let ds: LongTailDataset<f64> = LongTailDataset::synthesize(&params, seed).unwrap();
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..12 {
                for j in (i + 1)..12 {
                    let d: f64 = crate::geometry::euclidean_distance(
                        &ds.true_means[i],
                        &ds.true_means[j],
                    )
                    .unwrap();
                    total += d;
                    pairs += 1;
                }
            }
            ratios.push(total / pairs as f64 / (params.separation * params.spread));
        }
        let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (0.85..1.05).contains(&mean_ratio),
            "mean inter-centroid distance off target: ratio {mean_ratio}"
        );
    }

    #[test]
    fn centroid_concentration_scales_as_sigma_over_sqrt_n() {
        // E‖μ̂ − μ‖² = d σ² / n. Check the ratio at three sample sizes.
        let sigma = 0.8;
        let dim = 4;
        for &n in &[25usize, 100, 400] {
            let params = DataParams {
                classes: 2,
                dim,
                n_max: n,
                beta: 1.0,
                spread: sigma,
                separation: 4.0,
                test_per_class: 1,
            };
            let mut total = 0.0;
            let seeds = 150;
            for seed in 0..seeds {
                let ds: LongTailDataset<f64> =
                    LongTailDataset::synthesize(&params, 1000 + seed).unwrap();
                // Empirical centroid of class 0.
                let mut centroid = vec![0.0f64; dim];
                let mut count = 0.0;
                for (x, &l) in ds.train_inputs.iter().zip(&ds.train_labels) {
                    if l == 0 {
                        for (c, &v) in centroid.iter_mut().zip(x) {
                            *c += v;
                        }
                        count += 1.0;
                    }
                }
                for c in &mut centroid {
                    *c /= count;
                }
                let sq: f64 = centroid
                    .iter()
                    .zip(&ds.true_means[0])
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                total += sq;
            }
            let mean_sq = total / seeds as f64;
            let expected = dim as f64 * sigma * sigma / n as f64;
            let ratio = mean_sq / expected;
            assert!(
                (0.75..1.25).contains(&ratio),
                "n {n}: mean squared error {mean_sq}, expected {expected} (ratio {ratio})"
            );
        }
    }

    #[test]
    fn balanced_stream_is_uniform_over_classes_and_deterministic() {
        let params = DataParams {
            classes: 10,
            dim: 2,
            n_max: 100,
            beta: 20.0,
            test_per_class: 1,
            ..DataParams::default()
        };
        let ds: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 5).unwrap();
        let mut freq = vec![0usize; 10];
        let draws = 100_000;
        for idx in ds.balanced_stream(11).take(draws) {
            freq[ds.train_labels[idx]] += 1;
        }
        for (c, &f) in freq.iter().enumerate() {
            let rel = f as f64 / draws as f64;
            assert!(
                (rel - 0.1).abs() < 0.002,
                "class {c}: frequency {rel} deviates more than 2% from uniform"
            );
        }
        let a: Vec<usize> = ds.balanced_stream(42).take(50).collect();
        let b: Vec<usize> = ds.balanced_stream(42).take(50).collect();
        assert_eq!(a, b, "same seed, same prefix");
        let c: Vec<usize> = ds.balanced_stream(43).take(50).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let params = DataParams {
            classes: 3,
            dim: 4,
            n_max: 25,
            beta: 5.0,
            spread: 0.7,
            separation: 3.0,
            test_per_class: 6,
        };
        let ds: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 99).unwrap();
        let text = ds.to_text();
        let back: LongTailDataset<f64> = LongTailDataset::from_text(&text).unwrap();
        assert_eq!(ds, back);
        // Bit-exact float round trip, not just approximate equality.
        for (a, b) in ds.train_inputs.iter().flatten().zip(back.train_inputs.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn load_rejects_wrong_version_and_truncation() {
        let params = DataParams {
            classes: 2,
            dim: 2,
            n_max: 10,
            beta: 2.0,
            test_per_class: 2,
            ..DataParams::default()
        };
        let ds: LongTailDataset<f64> = LongTailDataset::synthesize(&params, 1).unwrap();
        let text = ds.to_text();

        let wrong = text.replace("longtail-dataset v1", "longtail-dataset v9");
        assert!(matches!(
            LongTailDataset::<f64>::from_text(&wrong).unwrap_err(),
            Error::UnsupportedVersion { .. }
        ));

        let truncated: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            LongTailDataset::<f64>::from_text(&truncated).unwrap_err(),
            Error::Parse { .. }
        ));

        let garbled = text.replace("train", "trian");
        assert!(LongTailDataset::<f64>::from_text(&garbled).is_err());
    }
}
