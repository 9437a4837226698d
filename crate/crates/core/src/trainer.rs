//! The three-stage training procedure and its artifacts.
//!
//! A run moves through three stages over one global epoch counter:
//!
//! 1. **warmup** — cross-entropy only (the joint loss pinned at λ = 1),
//!    recomputing the class-centroid bank at every epoch start so the next
//!    stage begins with valid centroids;
//! 2. **joint** — the configured λ blend of cross-entropy and the robust
//!    centroid loss; gradients reach the network through both the logits
//!    and the embeddings, and (for the learned policy) the per-class radii;
//! 3. **rebalance** — the backbone is frozen and only the classifier head
//!    trains, on a class-balanced resampling stream.
//!
//! Every epoch uses the centroid bank computed at its own start (batches
//! never see a mid-epoch bank), minibatch order comes from a per-epoch seeded
//! stream, and all reductions run in a fixed order — identical config and
//! seed reproduce the metrics CSV byte for byte, and a checkpoint resumes
//! the exact trajectory. A non-finite loss aborts loudly with diagnostics
//! rather than clipping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::batch::FeatureBatch;
use crate::centroids::CentroidBank;
use crate::config::{derive_seed, fnv1a64, RunConfig, KEYS};
use crate::data::LongTailDataset;
use crate::epsilon::EpsilonPolicy;
use crate::eval::{self, SplitAccuracy};
use crate::losses;
use crate::model::Network;
use crate::scalar::Real;
use crate::{Error, Result};

/// Checkpoint format accepted by [`Trainer::from_checkpoint`].
pub const CHECKPOINT_VERSION: &str = "drotail-checkpoint v1";

/// Fixed metrics CSV column order.
pub const METRICS_COLUMNS: &str = "epoch,stage,loss_total,loss_ce,loss_robust,\
acc_many,acc_med,acc_few,acc_balanced,gap_ratio,eps_min,eps_median,eps_max";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Warmup,
    Joint,
    Rebalance,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Warmup => "warmup",
            StageKind::Joint => "joint",
            StageKind::Rebalance => "rebalance",
        }
    }
}

/// One epoch's logged measurements. Losses are means over the epoch's
/// batches; accuracy and diagnostics are end-of-epoch evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: StageKind,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_robust: f64,
    pub accuracy: SplitAccuracy,
    pub gap_ratio: f64,
    pub eps_min: f64,
    pub eps_median: f64,
    pub eps_max: f64,
}

fn fmt(x: f64) -> String {
    format!("{x:.10e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

impl EpochMetrics {
    /// Row in the [`METRICS_COLUMNS`] order; absent splits are empty cells.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage.as_str(),
            fmt(self.loss_total),
            fmt(self.loss_ce),
            fmt(self.loss_robust),
            fmt_opt(self.accuracy.many),
            fmt_opt(self.accuracy.med),
            fmt_opt(self.accuracy.few),
            fmt(self.accuracy.balanced),
            fmt(self.gap_ratio),
            fmt(self.eps_min),
            fmt(self.eps_median),
            fmt(self.eps_max),
        )
    }
}

/// End-of-run summary. Serialized as JSON; embeds the resolved config so
/// every artifact is regenerable from the report alone.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_hash: String,
    /// Resolved configuration, key by key.
    pub config: BTreeMap<String, String>,
    pub class_counts: Vec<usize>,
    pub splits: Vec<String>,
    pub warmup_epochs_run: usize,
    pub joint_epochs_run: usize,
    pub rebalance_epochs_run: usize,
    pub early_stopped: bool,
    pub final_accuracy: SplitAccuracy,
    pub final_gap_ratio: f64,
    pub epsilon: eval::EpsilonReport,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("run report does not match schema: {e}")))
    }
}

/// Sequential line reader for the checkpoint format, tracking line numbers
/// for error messages.
struct Cursor<'a> {
    lines: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines(),
            line: 0,
        }
    }

    fn line(&self) -> usize {
        self.line
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.line += 1;
        self.lines.next().ok_or_else(|| Error::Parse {
            line: self.line,
            message: format!("checkpoint truncated, expected {what}"),
        })
    }

    fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Parse {
            line: 0,
            message: format!("cannot parse {what} from {s:?}"),
        })
    }

    /// Next line must be `key = value`; returns the value text.
    fn kv(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next(key)?;
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: self.line,
            message: format!("expected `{key} = value`, found {line:?}"),
        })?;
        if k.trim() != key {
            return Err(Error::Parse {
                line: self.line,
                message: format!("expected key {key}, found {}", k.trim()),
            });
        }
        Ok(v.trim())
    }

    fn kv_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.kv(key)?;
        Self::parse(v, key)
    }

    /// Reads a `<name> <count>` header line followed by one line of
    /// space-separated floats.
    fn vector<F: Real>(&mut self, name: &str) -> Result<Vec<F>> {
        let header = self.next(name)?;
        let count: usize = Self::parse(
            header.strip_prefix(&format!("{name} ")).ok_or(Error::Parse {
                line: self.line,
                message: format!("expected `{name} <count>`"),
            })?,
            "vector length",
        )?;
        let row = self.next("vector data")?;
        let values: Vec<F> = row
            .split_whitespace()
            .map(|tok| Self::parse::<f64>(tok, "float").map(F::of))
            .collect::<Result<_>>()?;
        if values.len() != count {
            return Err(Error::Parse {
                line: self.line,
                message: format!("{name}: expected {count} values, found {}", values.len()),
            });
        }
        Ok(values)
    }
}

/// Drives one training run: owns the network, the radius policy, the
/// centroid bank, the stage state machine, and the metrics log.
pub struct Trainer<F: Real> {
    config: RunConfig,
    dataset: LongTailDataset<F>,
    net: Network<F>,
    policy: EpsilonPolicy<F>,
    bank: Option<CentroidBank<F>>,
    global_epoch: usize,
    done_warmup: usize,
    done_joint: usize,
    done_rebalance: usize,
    warmup_done: bool,
    joint_done: bool,
    rebalance_done: bool,
    early_stopped: bool,
    best_balanced: f64,
    epochs_since_best: usize,
    metrics: Vec<EpochMetrics>,
}

impl<F: Real> std::fmt::Debug for Trainer<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("config_hash", &self.config.hash_hex())
            .field("global_epoch", &self.global_epoch)
            .field("warmup_done", &self.warmup_done)
            .field("joint_done", &self.joint_done)
            .field("rebalance_done", &self.rebalance_done)
            .finish_non_exhaustive()
    }
}

impl<F: Real> Trainer<F> {
    /// Builds a fresh trainer. The dataset must be the one the config
    /// describes (same generation parameters and seed) so that every number
    /// in the artifacts is regenerable from the config alone.
    pub fn new(config: RunConfig, dataset: LongTailDataset<F>) -> Result<Self> {
        config.validate()?;
        let mut problems = Vec::new();
        if dataset.params != config.data_params() {
            problems.push(format!(
                "dataset parameters {:?} do not match the data.* config keys {:?}",
                dataset.params,
                config.data_params()
            ));
        }
        if dataset.seed != config.data_seed {
            problems.push(format!(
                "dataset seed {} does not match data.seed {}",
                dataset.seed, config.data_seed
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let net = Network::new(
            config.data_dim,
            &config.model_widths,
            config.model_embedding_dim,
            config.data_classes,
            config.activation()?,
            derive_seed(config.train_seed, "model-init", 0),
        )?;
        let policy = config.epsilon_policy(dataset.class_counts())?;
        Ok(Self {
            config,
            dataset,
            net,
            policy,
            bank: None,
            global_epoch: 0,
            done_warmup: 0,
            done_joint: 0,
            done_rebalance: 0,
            warmup_done: false,
            joint_done: false,
            rebalance_done: false,
            early_stopped: false,
            best_balanced: f64::NEG_INFINITY,
            epochs_since_best: 0,
            metrics: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &LongTailDataset<F> {
        &self.dataset
    }

    pub fn network(&self) -> &Network<F> {
        &self.net
    }

    pub fn policy(&self) -> &EpsilonPolicy<F> {
        &self.policy
    }

    pub fn bank(&self) -> Option<&CentroidBank<F>> {
        self.bank.as_ref()
    }

    pub fn global_epoch(&self) -> usize {
        self.global_epoch
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn is_finished(&self) -> bool {
        self.warmup_done && self.joint_done && self.rebalance_done
    }

    fn recompute_bank(&mut self) -> Result<()> {
        let fwd = self.net.forward(&self.dataset.train_inputs)?;
        let full = FeatureBatch::new(
            fwd.embeddings,
            self.dataset.train_labels.clone(),
            self.dataset.num_classes(),
        )?;
        self.bank = Some(CentroidBank::recompute(&full, self.global_epoch)?);
        Ok(())
    }

    /// Runs one epoch of the given stage: recompute the bank, walk the
    /// minibatches, then evaluate and log. The bank computed here is the one
    /// every batch of this epoch consumes.
    fn run_one_epoch(&mut self, stage: StageKind) -> Result<()> {
        let classes = self.dataset.num_classes();
        let counts = self.dataset.class_counts().to_vec();
        let mode = self.config.weight_mode()?;
        let batch_size = self.config.train_batch_size;
        let n_train = self.dataset.train_inputs.len();

        self.recompute_bank()?;
        let bank = self.bank.as_ref().expect("just recomputed");

        let order: Vec<usize> = match stage {
            StageKind::Warmup | StageKind::Joint => {
                let mut idx: Vec<usize> = (0..n_train).collect();
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
                    self.config.train_seed,
                    "shuffle",
                    self.global_epoch,
                ));
                idx.shuffle(&mut rng);
                idx
            }
            StageKind::Rebalance => {
                let steps = n_train.div_ceil(batch_size);
                self.dataset
                    .balanced_stream(derive_seed(
                        self.config.train_seed,
                        "rebalance",
                        self.global_epoch,
                    ))
                    .take(steps * batch_size)
                    .collect()
            }
        };

        let lambda = match stage {
            StageKind::Joint => self.config.train_lambda,
            StageKind::Warmup | StageKind::Rebalance => 1.0,
        };
        let lr = F::of(self.config.lr_at_epoch(self.global_epoch));
        let momentum = F::of(self.config.train_momentum);

        let mut sum_total = 0.0;
        let mut sum_ce = 0.0;
        let mut sum_robust = 0.0;
        let mut n_batches = 0usize;

        for (batch_id, chunk) in order.chunks(batch_size).enumerate() {
            let inputs: Vec<Vec<F>> = chunk
                .iter()
                .map(|&i| self.dataset.train_inputs[i].clone())
                .collect();
            let labels: Vec<usize> =
                chunk.iter().map(|&i| self.dataset.train_labels[i]).collect();
            let fwd = self.net.forward(&inputs)?;
            let fb = FeatureBatch::new(fwd.embeddings.clone(), labels.clone(), classes)?
                .with_weight_mode(mode, &counts)?;
            let robust = losses::robust_loss(&fb, bank, &self.policy)?;
            let ce = losses::cross_entropy(&fwd.logits, &labels)?;
            let joint = losses::joint_loss(&ce, &robust, F::of(lambda))?;
            let grads = self
                .net
                .backward(&fwd, &joint.grad_embeddings, &joint.grad_logits)?;
            if !joint.value.is_finite() {
                let eps = self.policy.all_epsilons();
                let eps_min = eps.iter().cloned().fold(F::infinity(), F::min);
                let eps_max = eps.iter().cloned().fold(F::neg_infinity(), F::max);
                return Err(Error::NanAbort {
                    epoch: self.global_epoch,
                    batch: batch_id,
                    eps_min: eps_min.as_f64(),
                    eps_max: eps_max.as_f64(),
                    max_grad: grads.max_abs().as_f64(),
                });
            }
            self.net.sgd_step(&grads, lr, momentum)?;
            if self.policy.is_learned() && self.config.train_lr_epsilon > 0.0 {
                self.policy
                    .update_learned(&joint.grad_epsilon, F::of(self.config.train_lr_epsilon))?;
            }
            sum_total += joint.value.as_f64();
            sum_ce += joint.ce_value.as_f64();
            sum_robust += joint.robust_value.as_f64();
            n_batches += 1;
        }

        let denom = n_batches.max(1) as f64;
        let (accuracy, gap_ratio) = self.evaluate(bank)?;
        let (eps_min, eps_median, eps_max) = self.epsilon_snapshot();
        self.metrics.push(EpochMetrics {
            epoch: self.global_epoch,
            stage,
            loss_total: sum_total / denom,
            loss_ce: sum_ce / denom,
            loss_robust: sum_robust / denom,
            accuracy,
            gap_ratio,
            eps_min,
            eps_median,
            eps_max,
        });
        self.global_epoch += 1;
        Ok(())
    }

    /// Balanced-test accuracy and the bound-gap ratio over the training set
    /// (fresh embeddings against the given bank).
    fn evaluate(&self, bank: &CentroidBank<F>) -> Result<(SplitAccuracy, f64)> {
        let preds = eval::classify(&self.net, &self.dataset.test_inputs)?;
        let accuracy =
            eval::split_accuracy(&preds, &self.dataset.test_labels, &self.dataset.splits())?;
        let fwd = self.net.forward(&self.dataset.train_inputs)?;
        let fb = FeatureBatch::new(
            fwd.embeddings,
            self.dataset.train_labels.clone(),
            self.dataset.num_classes(),
        )?
        .with_weight_mode(self.config.weight_mode()?, self.dataset.class_counts())?;
        let gap = losses::bound_gap_ratio(&fb, bank, &self.policy)?.as_f64();
        Ok((accuracy, gap))
    }

    fn epsilon_snapshot(&self) -> (f64, f64, f64) {
        let mut eps: Vec<f64> = self.policy.all_epsilons().iter().map(|e| e.as_f64()).collect();
        eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = eps.len();
        let median = if n % 2 == 1 {
            eps[n / 2]
        } else {
            0.5 * (eps[n / 2 - 1] + eps[n / 2])
        };
        (eps[0], median, eps[n - 1])
    }

    /// One warmup epoch, or stage completion. `Ok(true)` means an epoch ran.
    fn warmup_tick(&mut self) -> Result<bool> {
        if self.done_warmup < self.config.train_warmup_epochs {
            self.run_one_epoch(StageKind::Warmup)?;
            self.done_warmup += 1;
            Ok(true)
        } else {
            if self.bank.is_none() {
                self.recompute_bank()?;
            }
            self.warmup_done = true;
            Ok(false)
        }
    }

    fn joint_tick(&mut self) -> Result<bool> {
        if self.done_joint >= self.config.train_joint_epochs {
            self.joint_done = true;
            return Ok(false);
        }
        self.run_one_epoch(StageKind::Joint)?;
        self.done_joint += 1;
        if self.config.train_early_stop_patience > 0 {
            let balanced = self.metrics.last().expect("epoch just logged").accuracy.balanced;
            if balanced > self.best_balanced {
                self.best_balanced = balanced;
                self.epochs_since_best = 0;
            } else {
                self.epochs_since_best += 1;
                if self.epochs_since_best >= self.config.train_early_stop_patience {
                    self.joint_done = true;
                    self.early_stopped = true;
                }
            }
        }
        Ok(true)
    }

    fn rebalance_tick(&mut self) -> Result<bool> {
        if self.done_rebalance >= self.config.train_rebalance_epochs {
            self.rebalance_done = true;
            return Ok(false);
        }
        self.net.freeze_backbone(true);
        self.run_one_epoch(StageKind::Rebalance)?;
        self.done_rebalance += 1;
        Ok(true)
    }

    /// Cross-entropy warmup (λ forced to 1). Errors if already completed.
    pub fn stage1_warmup(&mut self) -> Result<()> {
        if self.warmup_done {
            return Err(Error::StageOrder("warmup stage already completed".into()));
        }
        while self.warmup_tick()? {}
        Ok(())
    }

    /// Joint-loss stage. Requires completed warmup and a centroid bank.
    pub fn stage2_joint(&mut self) -> Result<()> {
        if !self.warmup_done {
            return Err(Error::StageOrder(
                "joint stage requires the warmup stage to have completed".into(),
            ));
        }
        if self.joint_done {
            return Err(Error::StageOrder("joint stage already completed".into()));
        }
        if self.bank.is_none() {
            return Err(Error::StageOrder(
                "joint stage requires a centroid bank from warmup".into(),
            ));
        }
        while self.joint_tick()? {}
        Ok(())
    }

    /// Frozen-backbone classifier rebalancing. Requires the joint stage.
    pub fn stage3_rebalance(&mut self) -> Result<()> {
        if !self.joint_done {
            return Err(Error::StageOrder(
                "rebalance stage requires the joint stage to have completed".into(),
            ));
        }
        if self.rebalance_done {
            return Err(Error::StageOrder(
                "rebalance stage already completed".into(),
            ));
        }
        while self.rebalance_tick()? {}
        Ok(())
    }

    /// Advances the overall plan by exactly one epoch (crossing stage
    /// boundaries as needed). `Ok(false)` once the whole plan is complete.
    pub fn step_epoch(&mut self) -> Result<bool> {
        loop {
            if !self.warmup_done {
                if self.warmup_tick()? {
                    return Ok(true);
                }
                continue;
            }
            if !self.joint_done {
                if self.joint_tick()? {
                    return Ok(true);
                }
                continue;
            }
            if !self.rebalance_done {
                if self.rebalance_tick()? {
                    return Ok(true);
                }
                continue;
            }
            return Ok(false);
        }
    }

    /// Runs all remaining stages and returns the report.
    pub fn run(&mut self) -> Result<RunReport> {
        while self.step_epoch()? {}
        self.report()
    }

    /// Summary of the run so far (complete runs embed the final epoch's
    /// evaluation; a zero-epoch plan evaluates the untouched network).
    pub fn report(&self) -> Result<RunReport> {
        let (final_accuracy, final_gap_ratio) = match self.metrics.last() {
            Some(last) => (last.accuracy.clone(), last.gap_ratio),
            None => {
                let bank = self.bank.as_ref().ok_or_else(|| {
                    Error::StageOrder("report requires at least the warmup stage".into())
                })?;
                self.evaluate(bank)?
            }
        };
        let mut config = BTreeMap::new();
        for key in KEYS {
            config.insert(key.to_string(), self.config.get(key)?);
        }
        Ok(RunReport {
            schema_version: 1,
            config_hash: self.config.hash_hex(),
            config,
            class_counts: self.dataset.class_counts().to_vec(),
            splits: self
                .dataset
                .splits()
                .iter()
                .map(|s| s.as_str().to_string())
                .collect(),
            warmup_epochs_run: self.done_warmup,
            joint_epochs_run: self.done_joint,
            rebalance_epochs_run: self.done_rebalance,
            early_stopped: self.early_stopped,
            final_accuracy,
            final_gap_ratio,
            epsilon: eval::epsilon_report(&self.policy, self.dataset.class_counts())?,
        })
    }

    /// Metrics CSV: a config/seed comment, the fixed header, one row per
    /// epoch run by this trainer instance.
    pub fn metrics_csv(&self) -> String {
        let mut out = format!(
            "# config_hash={} seed={}\n{}\n",
            self.config.hash_hex(),
            self.config.train_seed,
            METRICS_COLUMNS
        );
        for row in &self.metrics {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }

    /// Serializes the resumable state (stage counters, parameters, optimizer
    /// velocity, radius policy) with an integrity checksum.
    pub fn checkpoint_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_VERSION);
        out.push('\n');
        out.push_str(&format!("config_hash = {}\n", self.config.hash_hex()));
        out.push_str(&format!("signature = {}\n", self.net.signature()));
        out.push_str(&format!("global_epoch = {}\n", self.global_epoch));
        out.push_str(&format!("done_warmup = {}\n", self.done_warmup));
        out.push_str(&format!("done_joint = {}\n", self.done_joint));
        out.push_str(&format!("done_rebalance = {}\n", self.done_rebalance));
        out.push_str(&format!("warmup_done = {}\n", self.warmup_done));
        out.push_str(&format!("joint_done = {}\n", self.joint_done));
        out.push_str(&format!("rebalance_done = {}\n", self.rebalance_done));
        out.push_str(&format!("early_stopped = {}\n", self.early_stopped));
        out.push_str(&format!("best_balanced = {:.16e}\n", self.best_balanced));
        out.push_str(&format!("epochs_since_best = {}\n", self.epochs_since_best));
        let write_vec = |out: &mut String, name: &str, xs: &[F]| {
            out.push_str(&format!("{name} {}\n", xs.len()));
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:.16e}", x.as_f64()));
            }
            out.push('\n');
        };
        write_vec(&mut out, "params", &self.net.flatten_params());
        write_vec(&mut out, "velocity", self.net.velocity());
        out.push_str(&format!("policy = {}\n", self.policy.variant_name()));
        match &self.policy {
            EpsilonPolicy::Shared { value, num_classes } => {
                out.push_str(&format!("policy_value = {:.16e}\n", value.as_f64()));
                out.push_str(&format!("policy_classes = {num_classes}\n"));
            }
            EpsilonPolicy::SqrtN { value, counts } => {
                out.push_str(&format!("policy_value = {:.16e}\n", value.as_f64()));
                out.push_str(&format!(
                    "policy_counts = {}\n",
                    counts
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                ));
            }
            EpsilonPolicy::Learned { params } => {
                write_vec(&mut out, "policy_params", params);
            }
        }
        out.push_str(&format!("checksum = {:016x}\n", fnv1a64(out.as_bytes())));
        out
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_text())?;
        Ok(())
    }

    /// Restores a trainer mid-run. The checkpoint must carry the same config
    /// hash and network shape; any byte corruption fails the checksum.
    pub fn from_checkpoint(
        config: RunConfig,
        dataset: LongTailDataset<F>,
        text: &str,
    ) -> Result<Self> {
        // Integrity first: the final line must be a checksum over everything
        // before it.
        let tail = text
            .trim_end()
            .rsplit('\n')
            .next()
            .unwrap_or("");
        let expected = tail
            .strip_prefix("checksum = ")
            .ok_or_else(|| Error::Integrity("checkpoint is missing its checksum line".into()))?;
        let payload_len = text
            .trim_end()
            .len()
            .saturating_sub(tail.len());
        let actual = format!("{:016x}", fnv1a64(text[..payload_len].as_bytes()));
        if actual != expected.trim() {
            return Err(Error::Integrity(format!(
                "checkpoint checksum mismatch (stored {}, computed {actual})",
                expected.trim()
            )));
        }

        let mut trainer = Trainer::new(config, dataset)?;

        let mut cur = Cursor::new(text);
        let version = cur.next("version header")?;
        if version.trim() != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version.trim().to_string(),
                supported: CHECKPOINT_VERSION,
            });
        }

        let hash = cur.kv("config_hash")?.to_string();
        if hash != trainer.config.hash_hex() {
            return Err(Error::Integrity(format!(
                "checkpoint was produced by a different config (hash {hash}, current {})",
                trainer.config.hash_hex()
            )));
        }
        let signature = cur.kv("signature")?.to_string();
        if signature != trainer.net.signature() {
            return Err(Error::Integrity(format!(
                "checkpoint network shape {signature:?} does not match {:?}",
                trainer.net.signature()
            )));
        }
        trainer.global_epoch = cur.kv_parsed("global_epoch")?;
        trainer.done_warmup = cur.kv_parsed("done_warmup")?;
        trainer.done_joint = cur.kv_parsed("done_joint")?;
        trainer.done_rebalance = cur.kv_parsed("done_rebalance")?;
        trainer.warmup_done = cur.kv_parsed("warmup_done")?;
        trainer.joint_done = cur.kv_parsed("joint_done")?;
        trainer.rebalance_done = cur.kv_parsed("rebalance_done")?;
        trainer.early_stopped = cur.kv_parsed("early_stopped")?;
        trainer.best_balanced = cur.kv_parsed("best_balanced")?;
        trainer.epochs_since_best = cur.kv_parsed("epochs_since_best")?;

        let params: Vec<F> = cur.vector("params")?;
        trainer.net.load_params(&params)?;
        let velocity: Vec<F> = cur.vector("velocity")?;
        trainer.net.set_velocity(velocity)?;

        let variant = cur.kv("policy")?.to_string();
        trainer.policy = match variant.as_str() {
            "shared" => {
                let value: f64 = cur.kv_parsed("policy_value")?;
                let classes: usize = cur.kv_parsed("policy_classes")?;
                EpsilonPolicy::shared(F::of(value), classes)?
            }
            "sqrt_n" => {
                let value: f64 = cur.kv_parsed("policy_value")?;
                let counts: Vec<usize> = cur
                    .kv("policy_counts")?
                    .split(',')
                    .map(|tok| Cursor::parse(tok.trim(), "count"))
                    .collect::<Result<_>>()?;
                EpsilonPolicy::sqrt_n(F::of(value), counts)?
            }
            "learned" => {
                let params: Vec<F> = cur.vector("policy_params")?;
                EpsilonPolicy::learned_from_params(params)?
            }
            other => {
                return Err(Error::Parse {
                    line: cur.line(),
                    message: format!("unknown policy variant {other:?} in checkpoint"),
                })
            }
        };
        if trainer.policy.num_classes() != trainer.dataset.num_classes() {
            return Err(Error::Integrity(
                "checkpoint policy class count does not match the dataset".into(),
            ));
        }

        // A restored trainer keeps the warmup invariant "bank exists once
        // warmup completed" by recomputing it from the restored weights.
        if trainer.warmup_done {
            trainer.recompute_bank()?;
        }
        if trainer.joint_done && trainer.done_rebalance > 0 {
            trainer.net.freeze_backbone(true);
        }
        Ok(trainer)
    }

    pub fn load_checkpoint(
        config: RunConfig,
        dataset: LongTailDataset<F>,
        path: &std::path::Path,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(config, dataset, &text)
    }
}
