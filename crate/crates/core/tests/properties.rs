//! Property tests for the loss-layer invariants: metric axioms, bound
//! ordering, ε monotonicity, translation symmetry of the gradients, and the
//! round-trip identities of the serialization layers. Each property is the
//! statement of a contract the rest of the workspace builds on, so they run
//! against randomized inputs rather than fixtures.

use proptest::prelude::*;

use drotail::batch::FeatureBatch;
use drotail::centroids::CentroidBank;
use drotail::config::RunConfig;
use drotail::data::exponential_profile;
use drotail::epsilon::{softplus, EpsilonPolicy};
use drotail::geometry::{euclidean_distance, kl_spherical_gaussian, radius_from_divergence};
use drotail::losses::{
    certified_lower_bounds, certified_upper_bounds, log_sum_exp, lower_bound_loss, nll_loss,
    robust_loss,
};

const TOL: f64 = 1e-9;

/// A batch/bank pair small enough for exhaustive checking but with every
/// degree of freedom randomized: dimension, class count, sizes, values.
#[derive(Debug, Clone)]
struct Scene {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    classes: usize,
}

impl Scene {
    fn batch(&self) -> FeatureBatch<f64> {
        FeatureBatch::new(self.embeddings.clone(), self.labels.clone(), self.classes)
            .expect("scene batches are well formed")
            .with_inverse_batch_counts()
    }

    fn bank(&self) -> CentroidBank<f64> {
        CentroidBank::from_centroids(self.centroids.clone(), vec![1; self.classes], 0)
            .expect("scene banks are well formed")
    }
}

fn scenes() -> impl Strategy<Value = Scene> {
    (2usize..=4, 1usize..=4, 1usize..=8).prop_flat_map(|(classes, dim, n)| {
        let emb = prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), n);
        let labels = prop::collection::vec(0..classes, n);
        let cents = prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), classes);
        (emb, labels, cents).prop_map(move |(embeddings, labels, centroids)| Scene {
            embeddings,
            labels,
            centroids,
            classes,
        })
    })
}

fn vectors(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, dim)
}

proptest! {
    // --- metric axioms -----------------------------------------------------

    #[test]
    fn distance_is_symmetric_nonnegative_and_zero_on_the_diagonal(
        (a, b) in (1usize..=6).prop_flat_map(|d| (vectors(d), vectors(d)))
    ) {
        let ab = euclidean_distance(&a, &b).unwrap();
        let ba = euclidean_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= TOL * ab.max(1.0));
        prop_assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_satisfies_the_triangle_inequality(
        (a, b, c) in (1usize..=6).prop_flat_map(|d| (vectors(d), vectors(d), vectors(d)))
    ) {
        let ab = euclidean_distance(&a, &b).unwrap();
        let bc = euclidean_distance(&b, &c).unwrap();
        let ac = euclidean_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + TOL * (ab + bc).max(1.0));
    }

    #[test]
    fn distance_is_translation_invariant(
        (a, b, t) in (1usize..=6).prop_flat_map(|d| (vectors(d), vectors(d), vectors(d)))
    ) {
        let shifted_a: Vec<f64> = a.iter().zip(&t).map(|(x, s)| x + s).collect();
        let shifted_b: Vec<f64> = b.iter().zip(&t).map(|(x, s)| x + s).collect();
        let d0 = euclidean_distance(&a, &b).unwrap();
        let d1 = euclidean_distance(&shifted_a, &shifted_b).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
    }

    // --- divergence ball <-> metric ball ------------------------------------

    #[test]
    fn divergence_radius_conversion_round_trips(
        kl in 0.0..50.0f64,
        sigma in 0.01..10.0f64,
    ) {
        // The metric radius of a KL ball, fed back through the divergence of
        // two means at exactly that distance, recovers the KL radius.
        let r = radius_from_divergence(kl, sigma).unwrap();
        let back = kl_spherical_gaussian(&[0.0], &[r], sigma).unwrap();
        prop_assert!((back - kl).abs() <= 1e-9 * kl.max(1.0));
    }

    // --- log-sum-exp ---------------------------------------------------------

    #[test]
    fn log_sum_exp_matches_naive_and_shifts_additively(
        xs in prop::collection::vec(-20.0..20.0f64, 1..12),
        shift in -500.0..500.0f64,
    ) {
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        let lse = log_sum_exp(&xs);
        prop_assert!((lse - naive).abs() <= 1e-10 * naive.abs().max(1.0));

        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((log_sum_exp(&shifted) - (lse + shift)).abs() <= 1e-9);

        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lse >= max - TOL);
        prop_assert!(lse <= max + (xs.len() as f64).ln() + TOL);
    }

    // --- bound ordering ------------------------------------------------------

    #[test]
    fn bounds_sandwich_the_nll_pointwise(scene in scenes(), eps in 0.0..3.0f64) {
        let batch = scene.batch();
        let bank = scene.bank();
        let policy = EpsilonPolicy::shared(eps, scene.classes).unwrap();

        let upper = robust_loss(&batch, &bank, &policy).unwrap().per_sample;
        let nll = nll_loss(&batch, &bank).unwrap().per_sample;
        let lower = lower_bound_loss(&batch, &bank, &policy).unwrap();
        let cert_up = certified_upper_bounds(&batch, &bank, &policy).unwrap();
        let cert_lo = certified_lower_bounds(&batch, &bank, &policy).unwrap();

        for k in 0..batch.len() {
            // Class-shifted bounds enclose the NLL; the certified bounds
            // enclose the class-shifted ones (they shift every term).
            prop_assert!(lower[k] <= nll[k] + TOL);
            prop_assert!(nll[k] <= upper[k] + TOL);
            prop_assert!(cert_lo[k] <= lower[k] + TOL);
            prop_assert!(upper[k] <= cert_up[k] + TOL);
            // The certified gap is exactly 4ε.
            prop_assert!((cert_up[k] - cert_lo[k] - 4.0 * eps).abs() <= TOL);
        }
    }

    #[test]
    fn zero_radius_collapses_every_bound_onto_the_nll(scene in scenes()) {
        let batch = scene.batch();
        let bank = scene.bank();
        let policy = EpsilonPolicy::shared(0.0, scene.classes).unwrap();
        let nll = nll_loss(&batch, &bank).unwrap().per_sample;
        let upper = robust_loss(&batch, &bank, &policy).unwrap().per_sample;
        let lower = lower_bound_loss(&batch, &bank, &policy).unwrap();
        for k in 0..batch.len() {
            prop_assert!((upper[k] - nll[k]).abs() <= 1e-12);
            prop_assert!((lower[k] - nll[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn robust_total_is_monotone_in_each_radius(
        scene in scenes(),
        params in prop::collection::vec(-2.0..2.0f64, 4),
        bump in 0.01..2.0f64,
        which in 0usize..4,
    ) {
        let batch = scene.batch();
        let bank = scene.bank();
        let which = which % scene.classes;
        let params = params[..scene.classes].to_vec();

        let base = EpsilonPolicy::learned_from_params(params.clone()).unwrap();
        let mut bumped_params = params;
        bumped_params[which] += bump;
        let bumped = EpsilonPolicy::learned_from_params(bumped_params).unwrap();

        // Growing any single radius can only grow the upper bound and only
        // shrink the lower bound.
        let up0 = robust_loss(&batch, &bank, &base).unwrap().value;
        let up1 = robust_loss(&batch, &bank, &bumped).unwrap().value;
        prop_assert!(up1 >= up0 - TOL, "upper bound shrank: {up0} -> {up1}");

        let lo = |p: &EpsilonPolicy<f64>| -> f64 {
            let per = lower_bound_loss(&batch, &bank, p).unwrap();
            batch
                .labels()
                .iter()
                .zip(&per)
                .map(|(&l, &v)| batch.weight(l) * v)
                .sum()
        };
        prop_assert!(lo(&bumped) <= lo(&base) + TOL);
    }

    // --- symmetry of the gradients -------------------------------------------

    #[test]
    fn gradients_sum_to_zero_under_translation_symmetry(
        scene in scenes(),
        eps in 0.0..2.0f64,
    ) {
        // The loss depends on embeddings and centroids only through
        // differences, so a uniform translation of everything is a flat
        // direction: the embedding and centroid gradients must cancel.
        let batch = scene.batch();
        let bank = scene.bank();
        let policy = EpsilonPolicy::shared(eps, scene.classes).unwrap();
        let r = robust_loss(&batch, &bank, &policy).unwrap();
        let dim = batch.dim();
        for j in 0..dim {
            let total: f64 = r.grad_embeddings.iter().map(|g| g[j]).sum::<f64>()
                + r.grad_centroids.iter().map(|g| g[j]).sum::<f64>();
            prop_assert!(total.abs() <= 1e-8, "axis {j}: residual {total}");
        }
    }

    #[test]
    fn loss_is_invariant_under_joint_translation(
        scene in scenes(),
        eps in 0.0..2.0f64,
        shift in prop::collection::vec(-50.0..50.0f64, 4),
    ) {
        let batch = scene.batch();
        let bank = scene.bank();
        let policy = EpsilonPolicy::shared(eps, scene.classes).unwrap();
        let before = robust_loss(&batch, &bank, &policy).unwrap();

        let dim = batch.dim();
        let translate = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| r.iter().zip(&shift[..dim]).map(|(x, s)| x + s).collect())
                .collect()
        };
        let moved = Scene {
            embeddings: translate(batch.embeddings()),
            labels: scene.labels.clone(),
            centroids: translate(&scene.centroids),
            classes: scene.classes,
        };
        let after = robust_loss(&moved.batch(), &moved.bank(), &policy).unwrap();
        prop_assert!(
            (before.value - after.value).abs() <= 1e-7 * before.value.abs().max(1.0)
        );
    }

    // --- weight structure ------------------------------------------------------

    #[test]
    fn total_is_the_weighted_sum_of_per_sample_values(scene in scenes(), eps in 0.0..2.0f64) {
        let batch = scene.batch();
        let bank = scene.bank();
        let policy = EpsilonPolicy::shared(eps, scene.classes).unwrap();
        let r = robust_loss(&batch, &bank, &policy).unwrap();
        let recombined: f64 = batch
            .labels()
            .iter()
            .zip(&r.per_sample)
            .map(|(&l, &v)| batch.weight(l) * v)
            .sum();
        prop_assert!((r.value - recombined).abs() <= 1e-9 * r.value.abs().max(1.0));
    }

    // --- epsilon policies ------------------------------------------------------

    #[test]
    fn learned_radii_are_softplus_of_their_parameters(
        params in prop::collection::vec(-5.0..5.0f64, 1..6)
    ) {
        let policy = EpsilonPolicy::learned_from_params(params.clone()).unwrap();
        for (c, &p) in params.iter().enumerate() {
            let eps = policy.epsilon_for_class(c).unwrap();
            prop_assert!(eps > 0.0, "softplus output must be positive");
            prop_assert!((eps - softplus(p)).abs() <= 1e-12);
        }
    }

    #[test]
    fn sqrt_n_radii_scale_inversely_with_the_square_root_of_counts(
        value in 0.1..10.0f64,
        counts in prop::collection::vec(1usize..10_000, 2..6),
    ) {
        let policy = EpsilonPolicy::sqrt_n(value, counts.clone()).unwrap();
        for (c, &n) in counts.iter().enumerate() {
            let eps = policy.epsilon_for_class(c).unwrap();
            let want = value / (n as f64).sqrt();
            prop_assert!((eps - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    // --- long-tail profile -------------------------------------------------------

    #[test]
    fn class_size_profile_is_monotone_and_anchored(
        n_max in 10usize..2000,
        beta in 1.0..500.0f64,
        classes in 2usize..30,
    ) {
        match exponential_profile(n_max, beta, classes) {
            Ok(counts) => {
                prop_assert_eq!(counts.len(), classes);
                prop_assert_eq!(counts[0], n_max);
                for w in counts.windows(2) {
                    prop_assert!(w[0] >= w[1], "profile must not increase: {counts:?}");
                }
                prop_assert!(*counts.last().unwrap() >= 1);
            }
            // Extreme imbalance can round the tail to zero; that must be a
            // rejection, never a silent empty class.
            Err(e) => prop_assert!(e.to_string().contains("class")),
        }
    }

    // --- config round trip ---------------------------------------------------------

    #[test]
    fn config_text_round_trips_and_hash_is_stable(
        classes in 2usize..20,
        dim in 1usize..64,
        lambda in 0.0..=1.0f64,
        batch in 1usize..256,
        lr in 1e-4..1.0f64,
        eps in 0.0..10.0f64,
        seed in any::<u64>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.data_classes = classes;
        cfg.data_dim = dim;
        cfg.train_lambda = lambda;
        cfg.train_batch_size = batch;
        cfg.train_lr = lr;
        cfg.eps_policy = "shared".into();
        cfg.eps_value = eps;
        cfg.train_seed = seed;
        cfg.validate().unwrap();

        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.hash_hex(), cfg.hash_hex());
    }
}
