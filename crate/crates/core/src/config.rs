//! Flat key/value run configuration.
//!
//! A run is fully described by a small set of namespaced keys (`data.*`,
//! `model.*`, `train.*`, `eps.*`, `run.*`). Configs load from text files of
//! `key = value` lines (`#` starts a comment), every key has a default, and
//! unknown keys or invalid values are rejected with an exhaustive list of
//! problems — a run never starts on a half-validated config.
//!
//! [`RunConfig::to_text`] renders the *resolved* config in a canonical key
//! order; its FNV-1a hash ([`RunConfig::hash_hex`]) names run directories
//! and is stamped into every artifact so results stay traceable to the
//! exact configuration that produced them.

use std::collections::BTreeSet;

use crate::batch::WeightMode;
use crate::data::DataParams;
use crate::epsilon::EpsilonPolicy;
use crate::model::Activation;
use crate::scalar::Real;
use crate::{Error, Result};

/// Only config schema this build reads.
pub const CONFIG_VERSION: u64 = 1;

/// 64-bit FNV-1a hash (stable, dependency-free fingerprint for configs and
/// checkpoint integrity lines).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic per-purpose RNG seed: mixes a base seed, a purpose tag, and
/// an epoch index so every stream in a run is independent yet reproducible.
pub fn derive_seed(base: u64, tag: &str, epoch: usize) -> u64 {
    let mut bytes = Vec::with_capacity(tag.len() + 16);
    bytes.extend_from_slice(&base.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    bytes.extend_from_slice(&(epoch as u64).to_le_bytes());
    fnv1a64(&bytes)
}

/// Resolved configuration for one run. Fields mirror the config keys
/// one-to-one; see `default()` for the documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub version: u64,

    pub data_classes: usize,
    pub data_dim: usize,
    pub data_n_max: usize,
    pub data_beta: f64,
    pub data_spread: f64,
    pub data_separation: f64,
    pub data_test_per_class: usize,
    pub data_seed: u64,

    pub model_widths: Vec<usize>,
    pub model_embedding_dim: usize,
    pub model_activation: String,

    pub train_seed: u64,
    pub train_warmup_epochs: usize,
    pub train_joint_epochs: usize,
    pub train_rebalance_epochs: usize,
    pub train_lambda: f64,
    pub train_batch_size: usize,
    pub train_lr: f64,
    /// Global epoch indices at which the learning rate is multiplied by
    /// `train_lr_decay_factor` (multistep schedule).
    pub train_lr_decay_epochs: Vec<usize>,
    pub train_lr_decay_factor: f64,
    pub train_momentum: f64,
    pub train_lr_epsilon: f64,
    pub train_weight_mode: String,
    /// Early stopping patience on balanced accuracy during the joint stage;
    /// 0 disables early stopping.
    pub train_early_stop_patience: usize,

    pub eps_policy: String,
    pub eps_value: f64,

    pub run_root: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            data_classes: 10,
            data_dim: 16,
            data_n_max: 500,
            data_beta: 100.0,
            data_spread: 1.0,
            data_separation: 4.0,
            data_test_per_class: 100,
            data_seed: 1,
            model_widths: vec![64, 64],
            model_embedding_dim: 32,
            model_activation: "tanh".into(),
            train_seed: 1,
            train_warmup_epochs: 10,
            train_joint_epochs: 20,
            train_rebalance_epochs: 10,
            train_lambda: 0.5,
            train_batch_size: 64,
            train_lr: 0.1,
            train_lr_decay_epochs: Vec::new(),
            train_lr_decay_factor: 0.1,
            train_momentum: 0.9,
            train_lr_epsilon: 0.05,
            train_weight_mode: "inverse-batch".into(),
            train_early_stop_patience: 0,
            eps_policy: "learned".into(),
            eps_value: 1.0,
            run_root: "runs".into(),
        }
    }
}

/// Every key in canonical output order.
pub const KEYS: &[&str] = &[
    "config.version",
    "data.classes",
    "data.dim",
    "data.n_max",
    "data.beta",
    "data.spread",
    "data.separation",
    "data.test_per_class",
    "data.seed",
    "model.widths",
    "model.embedding_dim",
    "model.activation",
    "train.seed",
    "train.warmup_epochs",
    "train.joint_epochs",
    "train.rebalance_epochs",
    "train.lambda",
    "train.batch_size",
    "train.lr",
    "train.lr_decay_epochs",
    "train.lr_decay_factor",
    "train.momentum",
    "train.lr_epsilon",
    "train.weight_mode",
    "train.early_stop_patience",
    "eps.policy",
    "eps.value",
    "run.root",
];

fn fmt_f64(x: f64) -> String {
    // Shortest representation that round-trips (Rust's float Display).
    format!("{x}")
}

fn fmt_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Value of one key in its canonical text spelling.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "config.version" => self.version.to_string(),
            "data.classes" => self.data_classes.to_string(),
            "data.dim" => self.data_dim.to_string(),
            "data.n_max" => self.data_n_max.to_string(),
            "data.beta" => fmt_f64(self.data_beta),
            "data.spread" => fmt_f64(self.data_spread),
            "data.separation" => fmt_f64(self.data_separation),
            "data.test_per_class" => self.data_test_per_class.to_string(),
            "data.seed" => self.data_seed.to_string(),
            "model.widths" => fmt_list(&self.model_widths),
            "model.embedding_dim" => self.model_embedding_dim.to_string(),
            "model.activation" => self.model_activation.clone(),
            "train.seed" => self.train_seed.to_string(),
            "train.warmup_epochs" => self.train_warmup_epochs.to_string(),
            "train.joint_epochs" => self.train_joint_epochs.to_string(),
            "train.rebalance_epochs" => self.train_rebalance_epochs.to_string(),
            "train.lambda" => fmt_f64(self.train_lambda),
            "train.batch_size" => self.train_batch_size.to_string(),
            "train.lr" => fmt_f64(self.train_lr),
            "train.lr_decay_epochs" => fmt_list(&self.train_lr_decay_epochs),
            "train.lr_decay_factor" => fmt_f64(self.train_lr_decay_factor),
            "train.momentum" => fmt_f64(self.train_momentum),
            "train.lr_epsilon" => fmt_f64(self.train_lr_epsilon),
            "train.weight_mode" => self.train_weight_mode.clone(),
            "train.early_stop_patience" => self.train_early_stop_patience.to_string(),
            "eps.policy" => self.eps_policy.clone(),
            "eps.value" => fmt_f64(self.eps_value),
            "run.root" => self.run_root.clone(),
            _ => {
                return Err(Error::InvalidArgument(format!("unknown config key {key}")))
            }
        })
    }

    /// Sets one key from its text spelling. Unknown keys and unparseable
    /// values are errors; semantic validation happens in [`Self::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| {
                Error::InvalidArgument(format!("{key}: cannot parse {v:?}"))
            })
        }
        fn num_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|tok| num(key, tok.trim()))
                .collect()
        }
        match key {
            "config.version" => self.version = num(key, value)?,
            "data.classes" => self.data_classes = num(key, value)?,
            "data.dim" => self.data_dim = num(key, value)?,
            "data.n_max" => self.data_n_max = num(key, value)?,
            "data.beta" => self.data_beta = num(key, value)?,
            "data.spread" => self.data_spread = num(key, value)?,
            "data.separation" => self.data_separation = num(key, value)?,
            "data.test_per_class" => self.data_test_per_class = num(key, value)?,
            "data.seed" => self.data_seed = num(key, value)?,
            "model.widths" => self.model_widths = num_list(key, value)?,
            "model.embedding_dim" => self.model_embedding_dim = num(key, value)?,
            "model.activation" => self.model_activation = value.to_string(),
            "train.seed" => self.train_seed = num(key, value)?,
            "train.warmup_epochs" => self.train_warmup_epochs = num(key, value)?,
            "train.joint_epochs" => self.train_joint_epochs = num(key, value)?,
            "train.rebalance_epochs" => self.train_rebalance_epochs = num(key, value)?,
            "train.lambda" => self.train_lambda = num(key, value)?,
            "train.batch_size" => self.train_batch_size = num(key, value)?,
            "train.lr" => self.train_lr = num(key, value)?,
            "train.lr_decay_epochs" => self.train_lr_decay_epochs = num_list(key, value)?,
            "train.lr_decay_factor" => self.train_lr_decay_factor = num(key, value)?,
            "train.momentum" => self.train_momentum = num(key, value)?,
            "train.lr_epsilon" => self.train_lr_epsilon = num(key, value)?,
            "train.weight_mode" => self.train_weight_mode = value.to_string(),
            "train.early_stop_patience" => {
                self.train_early_stop_patience = num(key, value)?
            }
            "eps.policy" => self.eps_policy = value.to_string(),
            "eps.value" => self.eps_value = num(key, value)?,
            "run.root" => self.run_root = value.to_string(),
            _ => {
                return Err(Error::InvalidArgument(format!("unknown config key {key}")))
            }
        }
        Ok(())
    }

    /// Parses a config file's text on top of the defaults, then validates.
    /// All problems (syntax, unknown keys, semantic violations) are reported
    /// together.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                problems.push(format!("line {}: duplicate key {key}", i + 1));
                continue;
            }
            if let Err(e) = cfg.set(key, value) {
                problems.push(format!("line {}: {e}", i + 1));
            }
        }
        match cfg.validate() {
            Ok(()) if problems.is_empty() => Ok(cfg),
            Ok(()) => Err(Error::Config(problems)),
            Err(Error::Config(mut more)) => {
                problems.append(&mut more);
                Err(Error::Config(problems))
            }
            Err(other) => Err(other),
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Exhaustive semantic validation; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.version != CONFIG_VERSION {
            problems.push(format!(
                "config.version: only version {CONFIG_VERSION} is supported, got {}",
                self.version
            ));
        }
        if self.data_classes < 2 {
            problems.push("data.classes: need at least 2 classes".into());
        }
        if self.data_dim == 0 {
            problems.push("data.dim: must be positive".into());
        }
        if self.data_n_max == 0 {
            problems.push("data.n_max: must be positive".into());
        }
        if !(self.data_beta >= 1.0) || !self.data_beta.is_finite() {
            problems.push(format!(
                "data.beta: must be a finite value >= 1, got {}",
                self.data_beta
            ));
        } else if self.data_classes >= 2
            && self.data_n_max > 0
            && (self.data_n_max as f64 / self.data_beta).round() < 1.0
        {
            problems.push(format!(
                "data.beta: tail class would round to 0 samples (n_max {}, beta {})",
                self.data_n_max, self.data_beta
            ));
        }
        if !(self.data_spread > 0.0) || !self.data_spread.is_finite() {
            problems.push(format!(
                "data.spread: must be positive, got {}",
                self.data_spread
            ));
        }
        if !(self.data_separation > 0.0) || !self.data_separation.is_finite() {
            problems.push(format!(
                "data.separation: must be positive, got {}",
                self.data_separation
            ));
        }
        if self.data_test_per_class == 0 {
            problems.push("data.test_per_class: must be positive".into());
        }
        if self.model_widths.is_empty() {
            problems.push("model.widths: need at least one hidden width".into());
        }
        if self.model_widths.iter().any(|&w| w == 0) {
            problems.push("model.widths: widths must be positive".into());
        }
        if self.model_embedding_dim == 0 {
            problems.push("model.embedding_dim: must be positive".into());
        }
        if Activation::parse(&self.model_activation).is_err() {
            problems.push(format!(
                "model.activation: expected tanh or relu, got {:?}",
                self.model_activation
            ));
        }
        if !(0.0..=1.0).contains(&self.train_lambda) || !self.train_lambda.is_finite() {
            problems.push(format!(
                "train.lambda: must lie in [0, 1], got {}",
                self.train_lambda
            ));
        }
        if self.train_batch_size == 0 {
            problems.push("train.batch_size: must be positive".into());
        }
        if !(self.train_lr > 0.0) || !self.train_lr.is_finite() {
            problems.push(format!("train.lr: must be positive, got {}", self.train_lr));
        }
        if !(0.0..1.0).contains(&self.train_momentum) {
            problems.push(format!(
                "train.momentum: must lie in [0, 1), got {}",
                self.train_momentum
            ));
        }
        if !(self.train_lr_decay_factor > 0.0 && self.train_lr_decay_factor <= 1.0) {
            problems.push(format!(
                "train.lr_decay_factor: must lie in (0, 1], got {}",
                self.train_lr_decay_factor
            ));
        }
        if self
            .train_lr_decay_epochs
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            problems.push("train.lr_decay_epochs: must be strictly increasing".into());
        }
        if !(self.train_lr_epsilon >= 0.0) || !self.train_lr_epsilon.is_finite() {
            problems.push(format!(
                "train.lr_epsilon: must be nonnegative, got {}",
                self.train_lr_epsilon
            ));
        }
        if WeightMode::parse(&self.train_weight_mode).is_err() {
            problems.push(format!(
                "train.weight_mode: expected uniform, inverse-dataset, or inverse-batch, got {:?}",
                self.train_weight_mode
            ));
        }
        match self.eps_policy.as_str() {
            "shared" | "sqrt_n" => {
                if !(self.eps_value >= 0.0) || !self.eps_value.is_finite() {
                    problems.push(format!(
                        "eps.value: must be nonnegative for policy {}, got {}",
                        self.eps_policy, self.eps_value
                    ));
                }
            }
            "learned" => {
                if !(self.eps_value > 0.0) || !self.eps_value.is_finite() {
                    problems.push(format!(
                        "eps.value: learned policy needs a positive initial radius, got {}",
                        self.eps_value
                    ));
                }
            }
            other => {
                problems.push(format!(
                    "eps.policy: expected shared, sqrt_n, or learned, got {other:?}"
                ));
            }
        }
        if self.run_root.is_empty() {
            problems.push("run.root: must not be empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Canonical text rendering (fixed key order); parsing it back yields an
    /// identical config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap()));
        }
        out
    }

    /// 16-hex-digit fingerprint of the resolved config.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_text().as_bytes()))
    }

    /// Dataset parameters encoded by the `data.*` keys.
    pub fn data_params(&self) -> DataParams {
        DataParams {
            classes: self.data_classes,
            dim: self.data_dim,
            n_max: self.data_n_max,
            beta: self.data_beta,
            spread: self.data_spread,
            separation: self.data_separation,
            test_per_class: self.data_test_per_class,
        }
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::parse(&self.model_activation)
    }

    pub fn weight_mode(&self) -> Result<WeightMode> {
        WeightMode::parse(&self.train_weight_mode)
    }

    /// Builds the radius policy from `eps.*`; sqrt_n needs the class counts.
    pub fn epsilon_policy<F: Real>(&self, class_counts: &[usize]) -> Result<EpsilonPolicy<F>> {
        let value = F::of(self.eps_value);
        match self.eps_policy.as_str() {
            "shared" => EpsilonPolicy::shared(value, class_counts.len()),
            "sqrt_n" => EpsilonPolicy::sqrt_n(value, class_counts.to_vec()),
            "learned" => EpsilonPolicy::learned(value, class_counts.len()),
            other => Err(Error::InvalidArgument(format!(
                "eps.policy: unknown policy {other:?}"
            ))),
        }
    }

    /// Learning rate in effect at a global epoch under the multistep
    /// schedule: the base rate decayed once per listed epoch that has been
    /// reached.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = self
            .train_lr_decay_epochs
            .iter()
            .filter(|&&d| d <= epoch)
            .count();
        self.train_lr * self.train_lr_decay_factor.powi(decays as i32)
    }

    /// Total epochs across the three stages.
    pub fn total_epochs(&self) -> usize {
        self.train_warmup_epochs + self.train_joint_epochs + self.train_rebalance_epochs
    }
}
