//! End-to-end behavioral tests of the training pipeline on synthetic data:
//! the network actually learns, the layer probes behave like representation
//! diagnostics should, overfitting shows up as a head/tail generalization
//! gap, and the rebalancing stage does not sacrifice tail accuracy.
//!
//! These run real (small) training loops, so each asserts medians or generous
//! margins rather than point values; seeds are fixed for reproducibility.

use drotail::config::RunConfig;
use drotail::data::LongTailDataset;
use drotail::eval;
use drotail::trainer::Trainer;

/// Balanced, well-separated data that any working pipeline must fit. Uses
/// relu: at this input scale tanh units can saturate at init and strand a
/// class, which would test luck rather than the pipeline.
fn easy_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data_classes = 4;
    cfg.data_dim = 8;
    cfg.data_n_max = 60;
    cfg.data_beta = 1.0;
    cfg.data_separation = 5.0;
    cfg.data_test_per_class = 25;
    cfg.data_seed = seed;
    cfg.model_widths = vec![16];
    cfg.model_embedding_dim = 8;
    cfg.model_activation = "relu".into();
    cfg.train_seed = seed;
    cfg.train_warmup_epochs = 20;
    cfg.train_joint_epochs = 0;
    cfg.train_rebalance_epochs = 0;
    cfg.train_batch_size = 32;
    cfg.train_lr = 0.1;
    cfg.train_lr_decay_epochs = vec![14];
    cfg.train_lr_decay_factor = 0.2;
    cfg.validate().expect("easy config is valid");
    cfg
}

fn trainer_for(cfg: &RunConfig) -> Trainer<f64> {
    let dataset =
        LongTailDataset::synthesize(&cfg.data_params(), cfg.data_seed).expect("synthesize");
    Trainer::new(cfg.clone(), dataset).expect("trainer")
}

fn train_accuracy(trainer: &Trainer<f64>) -> f64 {
    let ds = trainer.dataset();
    let preds = eval::classify(trainer.network(), &ds.train_inputs).expect("classify");
    let hits = preds
        .iter()
        .zip(&ds.train_labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / preds.len() as f64
}

fn median(xs: &mut Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    xs[xs.len() / 2]
}

#[test]
fn warmup_fits_balanced_well_separated_data() {
    let cfg = easy_config(5);
    let mut trainer = trainer_for(&cfg);
    trainer.stage1_warmup().expect("warmup");
    let train_acc = train_accuracy(&trainer);
    assert!(
        train_acc > 0.9,
        "warmup must fit easy data, got train accuracy {train_acc}"
    );
    let last = trainer.metrics().last().expect("metrics");
    assert!(
        last.accuracy.balanced > 0.85,
        "test accuracy should follow on separated data, got {}",
        last.accuracy.balanced
    );
    // The loss actually went somewhere.
    let first = &trainer.metrics()[0];
    assert!(last.loss_total < first.loss_total);
}

#[test]
fn embedding_probe_tracks_classifier_accuracy() {
    // After training, a nearest-centroid readout of the embedding layer is
    // almost as good as the trained linear classifier itself — the standard
    // check that the representation, not just the head, carries the classes.
    let mut diffs = Vec::new();
    let mut depth_gains = Vec::new();
    for seed in [1, 2, 3] {
        let mut cfg = easy_config(seed);
        cfg.data_separation = 3.0; // hard enough that the input layer is not already perfect
        cfg.data_test_per_class = 50;
        cfg.model_widths = vec![32, 32];
        cfg.train_warmup_epochs = 25;
        cfg.train_lr_decay_epochs = vec![18];
        cfg.validate().expect("valid");
        let mut trainer = trainer_for(&cfg);
        trainer.stage1_warmup().expect("warmup");

        let classifier = trainer.metrics().last().expect("metrics").accuracy.balanced;
        let probes =
            eval::probe_all_layers(trainer.network(), trainer.dataset()).expect("probes");
        let input_probe = probes.first().expect("input layer").balanced;
        let embed_probe = probes.last().expect("embedding layer").balanced;
        diffs.push(classifier - embed_probe);
        depth_gains.push(embed_probe - input_probe);
    }
    let diff = median(&mut diffs);
    assert!(
        diff.abs() <= 0.05,
        "embedding probe should sit within 5 points of the classifier, median gap {diff}"
    );
    let gain = median(&mut depth_gains);
    assert!(
        gain >= -0.03,
        "training should not make embeddings less separable than raw inputs, median gain {gain}"
    );
}

#[test]
fn overcapacity_memorizes_the_train_set_but_not_the_tail() {
    // The failure mode this whole design targets: a big network driven by
    // plain cross-entropy memorizes every training point, yet the scarce
    // classes still miss on fresh samples — the generalization gap
    // concentrates in the tail.
    let mut cfg = RunConfig::default();
    cfg.data_classes = 5;
    cfg.data_dim = 4;
    cfg.data_n_max = 80;
    cfg.data_beta = 40.0;
    cfg.data_separation = 1.6; // heavy class overlap
    cfg.data_test_per_class = 50;
    cfg.data_seed = 7;
    cfg.model_widths = vec![64, 64];
    cfg.model_embedding_dim = 16;
    cfg.train_seed = 7;
    cfg.train_warmup_epochs = 150; // pure cross-entropy, long enough to memorize
    cfg.train_joint_epochs = 0;
    cfg.train_rebalance_epochs = 0;
    cfg.train_batch_size = 16;
    cfg.train_lr = 0.05;
    cfg.train_lr_decay_epochs = vec![60, 100, 130]; // anneal into the memorizing minimum
    cfg.train_lr_decay_factor = 0.2;
    cfg.validate().expect("valid");

    let mut trainer = trainer_for(&cfg);
    trainer.stage1_warmup().expect("warmup");
    let report = eval::error_gap_report(trainer.network(), trainer.dataset()).expect("report");

    // Rows are sorted by descending count: head first, tail last.
    let head = report.rows.first().expect("head row");
    let tail = report.rows.last().expect("tail row");
    assert!(head.count > 10 * tail.count, "profile sanity: {report:?}");

    let mean_train_error: f64 =
        report.rows.iter().map(|r| r.train_error).sum::<f64>() / report.rows.len() as f64;
    assert!(
        mean_train_error < 0.05,
        "the over-sized network should near-memorize training data, got {mean_train_error}"
    );
    assert!(
        tail.test_error > head.test_error + 0.1,
        "the generalization gap should concentrate in the tail: head {} vs tail {}",
        head.test_error,
        tail.test_error
    );
    let tail_gap = tail.test_error - tail.train_error;
    assert!(
        tail_gap > 0.1,
        "tail train/test gap should be large, got {tail_gap}"
    );
}

#[test]
fn rebalancing_does_not_sacrifice_tail_accuracy() {
    // Stage 3 retrains only the classifier on class-balanced batches; across
    // seeds it must leave the scarce classes no worse than the joint stage
    // did (typically better).
    let mut deltas = Vec::new();
    for seed in [11, 12, 13] {
        let mut cfg = RunConfig::default();
        cfg.data_classes = 6;
        cfg.data_dim = 8;
        cfg.data_n_max = 150;
        cfg.data_beta = 60.0;
        cfg.data_separation = 2.5;
        cfg.data_test_per_class = 30;
        cfg.data_seed = seed;
        cfg.model_widths = vec![32, 32];
        cfg.model_embedding_dim = 16;
        cfg.train_seed = seed;
        cfg.train_warmup_epochs = 8;
        cfg.train_joint_epochs = 8;
        cfg.train_rebalance_epochs = 6;
        cfg.train_lambda = 0.5;
        cfg.train_batch_size = 32;
        cfg.train_lr = 0.1;
        cfg.train_lr_epsilon = 0.05;
        cfg.validate().expect("valid");

        let mut trainer = trainer_for(&cfg);
        trainer.stage1_warmup().expect("warmup");
        trainer.stage2_joint().expect("joint");
        let few_before = trainer
            .metrics()
            .last()
            .expect("metrics")
            .accuracy
            .few
            .expect("few split present");
        trainer.stage3_rebalance().expect("rebalance");
        let few_after = trainer
            .metrics()
            .last()
            .expect("metrics")
            .accuracy
            .few
            .expect("few split present");
        deltas.push(few_after - few_before);
    }
    let delta = median(&mut deltas);
    assert!(
        delta >= -0.02,
        "rebalancing should not cost tail accuracy; median change {delta}"
    );
}

#[test]
fn learned_radii_end_positive_and_finite_after_a_full_run() {
    // The softplus parameterization keeps every radius strictly positive no
    // matter how hard the optimizer pushes; a full pipeline must never
    // produce zero, negative, or non-finite radii.
    let mut cfg = easy_config(17);
    cfg.train_joint_epochs = 6;
    cfg.train_rebalance_epochs = 2;
    cfg.train_lambda = 0.3; // strong robust-loss weight moves ε hard
    cfg.train_lr_epsilon = 0.2;
    cfg.validate().expect("valid");
    let mut trainer = trainer_for(&cfg);
    trainer.run().expect("full run");
    let radii = trainer.policy().all_epsilons();
    assert_eq!(radii.len(), 4);
    for (c, eps) in radii.iter().enumerate() {
        assert!(eps.is_finite() && *eps > 0.0, "class {c}: radius {eps}");
    }
}
