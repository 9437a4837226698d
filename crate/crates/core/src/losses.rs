//! Centroid-likelihood losses: the plain per-class NLL, its robust upper
//! bound, the matching lower bound, certified triangle-inequality bounds, and
//! the cross-entropy / joint combinations the trainer consumes.
//!
//! The likelihood of a sample under class `c` is a softmax over the batch in
//! negative distance to the class centroid:
//!
//! ```text
//! P(z | μ) = exp(−d(μ, z)) / Σ_{z' ∈ Z} exp(−d(μ, z'))
//! ```
//!
//! The robust loss defends against the centroid μ̂_c being wrong by up to the
//! radius ε_c: the numerator distance grows by 2ε_c and every *same-class*
//! term in the denominator sum shrinks by the same amount,
//!
//! ```text
//! L_rob(z) = d(μ̂_c, z) + 2ε_c + ln Σ_{z'} exp(−d(μ̂_c, z') − 2ε_c·δ(z', c))
//! ```
//!
//! with `δ(z', c) = 1` iff `z'` carries label `c`. The lower-bound companion
//! flips both shifts. Shifting *every* denominator term instead (so the shift
//! factors out of the log-sum) gives the bounds that the metric's triangle
//! inequality certifies for any centroid inside the ball:
//! [`certified_upper_bounds`] / [`certified_lower_bounds`], which equal the
//! plain NLL per-sample values ± 2ε_c. The class-shifted forms are tighter in
//! practice and are what training minimizes, but when a class has two or more
//! batch members they can cross the true value for off-centroid centroids;
//! the certified forms never do.
//!
//! All log-sum-exp evaluations are max-shifted. Gradients are closed-form;
//! with `p^c` the class-`c` block softmax, `m_c` the in-batch class count,
//! `u_i^c = (z_i − μ̂_c)/d(μ̂_c, z_i)`, and `w(c)` the class weight:
//!
//! ```text
//! ∂L/∂z_j   = Σ_c w(c) · (1[l_j = c] − m_c p^c_j) · u_j^c
//! ∂L/∂μ̂_c  = w(c) · (−Σ_{j: l_j=c} u_j^c + m_c Σ_j p^c_j u_j^c)
//! ∂L/∂ε_c  = w(c) · 2 m_c (1 − Σ_{j: l_j=c} p^c_j)   (robust form)
//! ```

use crate::batch::FeatureBatch;
use crate::centroids::CentroidBank;
use crate::epsilon::EpsilonPolicy;
use crate::geometry::euclidean_distance;
use crate::scalar::Real;
use crate::{Error, Result};

/// Value and gradients of a centroid-likelihood loss over one batch.
#[derive(Debug, Clone)]
pub struct LossResult<F: Real> {
    /// Weighted total: `Σ_c w(c) Σ_{z ∈ S_c ∩ batch} per_sample(z)`.
    pub value: F,
    /// Unweighted per-sample loss values, batch order.
    pub per_sample: Vec<F>,
    /// Gradient of `value` w.r.t. each embedding, batch order.
    pub grad_embeddings: Vec<Vec<F>>,
    /// Gradient of `value` w.r.t. each class centroid (zero rows for classes
    /// absent from the batch).
    pub grad_centroids: Vec<Vec<F>>,
    /// Gradient of `value` w.r.t. each radius ε_c. All-zero unless the
    /// policy is the learned variant.
    pub grad_epsilon: Vec<F>,
}

/// Value and logit gradients of the mean cross-entropy over one batch.
#[derive(Debug, Clone)]
pub struct CeLoss<F: Real> {
    pub value: F,
    /// Gradient w.r.t. each logit row (already scaled by `1/batch`).
    pub grad_logits: Vec<Vec<F>>,
}

/// Convex combination `λ·CE + (1−λ)·robust` with gradients for both
/// injection points (logits and embeddings) plus the ε chain.
#[derive(Debug, Clone)]
pub struct JointLoss<F: Real> {
    pub value: F,
    pub ce_value: F,
    pub robust_value: F,
    pub grad_logits: Vec<Vec<F>>,
    pub grad_embeddings: Vec<Vec<F>>,
    pub grad_epsilon: Vec<F>,
}

/// Likelihood of `z` under the batch softmax centered at `centroid`.
///
/// `z` is expected to be a member of the batch (that is what makes the value
/// a probability in `(0, 1]`); the function itself only checks dimensions.
pub fn sample_likelihood<F: Real>(
    z: &[F],
    centroid: &[F],
    batch: &FeatureBatch<F>,
) -> Result<F> {
    if centroid.len() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            got: centroid.len(),
        });
    }
    let d_z = euclidean_distance(centroid, z)?;
    let neg_d: Vec<F> = batch
        .embeddings()
        .iter()
        .map(|e| euclidean_distance(centroid, e).map(|d| -d))
        .collect::<Result<_>>()?;
    let lse = log_sum_exp(&neg_d);
    Ok((-d_z - lse).exp())
}

/// Plain per-class NLL (the ε = 0 loss) with gradients.
pub fn nll_loss<F: Real>(batch: &FeatureBatch<F>, bank: &CentroidBank<F>) -> Result<LossResult<F>> {
    let zeros = vec![F::zero(); batch.num_classes()];
    shifted_loss(batch, bank, &zeros, F::one(), -F::one(), false)
}

/// Robust upper-bound loss with gradients for embeddings, centroids, and
/// (for the learned policy) the radii.
pub fn robust_loss<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    policy: &EpsilonPolicy<F>,
) -> Result<LossResult<F>> {
    let eps = policy_epsilons(batch, policy)?;
    shifted_loss(batch, bank, &eps, F::one(), -F::one(), policy.is_learned())
}

/// Lower-bound companion of [`robust_loss`]: per-sample values only.
pub fn lower_bound_loss<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    policy: &EpsilonPolicy<F>,
) -> Result<Vec<F>> {
    let eps = policy_epsilons(batch, policy)?;
    Ok(shifted_loss(batch, bank, &eps, -F::one(), F::one(), false)?.per_sample)
}

/// Per-sample upper bounds certified by the triangle inequality: they hold
/// for the likelihood evaluated at *any* centroid within ε_c of μ̂_c.
/// Equal to the plain NLL per-sample values plus `2ε_c`.
pub fn certified_upper_bounds<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    policy: &EpsilonPolicy<F>,
) -> Result<Vec<F>> {
    certified_bounds(batch, bank, policy, F::one())
}

/// Per-sample lower bounds certified by the triangle inequality; the plain
/// NLL per-sample values minus `2ε_c`.
pub fn certified_lower_bounds<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    policy: &EpsilonPolicy<F>,
) -> Result<Vec<F>> {
    certified_bounds(batch, bank, policy, -F::one())
}

fn certified_bounds<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    policy: &EpsilonPolicy<F>,
    sign: F,
) -> Result<Vec<F>> {
    let eps = policy_epsilons(batch, policy)?;
    let nll = nll_loss(batch, bank)?;
    Ok(nll
        .per_sample
        .iter()
        .zip(batch.labels())
        .map(|(&v, &l)| v + sign * F::of(2.0) * eps[l])
        .collect())
}

/// Mean per-sample `|upper − lower|` divided by the batch robust loss.
///
/// Zero exactly at ε = 0 (the two bounds collapse onto the NLL) and also for
/// single-class batches, where the class shift factors out of the log-sum.
pub fn bound_gap_ratio<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    policy: &EpsilonPolicy<F>,
) -> Result<F> {
    let upper = robust_loss(batch, bank, policy)?;
    let lower = lower_bound_loss(batch, bank, policy)?;
    let mean_gap = upper
        .per_sample
        .iter()
        .zip(&lower)
        .map(|(&u, &l)| (u - l).abs())
        .sum::<F>()
        / F::of(batch.len() as f64);
    if upper.value == F::zero() {
        // A zero total (possible only in degenerate all-zero configurations)
        // would make the ratio undefined; the gap is zero there too.
        return Ok(F::zero());
    }
    Ok(mean_gap / upper.value)
}

/// Mean cross-entropy of softmaxed `logits` against `labels`, with the
/// closed-form logit gradient `(softmax − onehot) / batch`.
pub fn cross_entropy<F: Real>(logits: &[Vec<F>], labels: &[usize]) -> Result<CeLoss<F>> {
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: labels.len(),
        });
    }
    let classes = logits[0].len();
    let inv_n = F::one() / F::of(logits.len() as f64);
    let mut value = F::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if row.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: row.len(),
            });
        }
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        let lse = log_sum_exp(row);
        value += (lse - row[label]) * inv_n;
        let mut g: Vec<F> = row.iter().map(|&x| (x - lse).exp() * inv_n).collect();
        g[label] -= inv_n;
        grad.push(g);
    }
    Ok(CeLoss {
        value,
        grad_logits: grad,
    })
}

/// `λ·CE + (1−λ)·robust`; gradients combine by the same linearity.
pub fn joint_loss<F: Real>(ce: &CeLoss<F>, robust: &LossResult<F>, lambda: F) -> Result<JointLoss<F>> {
    if !(F::zero()..=F::one()).contains(&lambda) || !lambda.is_finite() {
        return Err(Error::InvalidLambda {
            got: lambda.as_f64(),
        });
    }
    let complement = F::one() - lambda;
    let scale_rows = |rows: &[Vec<F>], s: F| -> Vec<Vec<F>> {
        rows.iter()
            .map(|r| r.iter().map(|&x| x * s).collect())
            .collect()
    };
    Ok(JointLoss {
        value: lambda * ce.value + complement * robust.value,
        ce_value: ce.value,
        robust_value: robust.value,
        grad_logits: scale_rows(&ce.grad_logits, lambda),
        grad_embeddings: scale_rows(&robust.grad_embeddings, complement),
        grad_epsilon: robust.grad_epsilon.iter().map(|&g| g * complement).collect(),
    })
}

/// Max-shifted `ln Σ exp(x_i)`.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let m = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    if !m.is_finite() {
        return m;
    }
    let s = xs.iter().map(|&x| (x - m).exp()).sum::<F>();
    m + s.ln()
}

fn policy_epsilons<F: Real>(batch: &FeatureBatch<F>, policy: &EpsilonPolicy<F>) -> Result<Vec<F>> {
    if policy.num_classes() != batch.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: batch.num_classes(),
            got: policy.num_classes(),
        });
    }
    Ok(policy.all_epsilons())
}

/// Shared implementation of the three shifted losses.
///
/// Per-sample value for `z_k` of class `c`:
/// `d_k + num_sign·2ε_c + ln Σ_j exp(−d_j + den_sign·2ε_c·δ_j)`.
/// Robust: `num_sign = +1, den_sign = −1`; lower bound: flipped; NLL: ε = 0.
fn shifted_loss<F: Real>(
    batch: &FeatureBatch<F>,
    bank: &CentroidBank<F>,
    eps: &[F],
    num_sign: F,
    den_sign: F,
    epsilon_grads: bool,
) -> Result<LossResult<F>> {
    if bank.dim() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            got: bank.dim(),
        });
    }
    if bank.num_classes() != batch.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: batch.num_classes(),
            got: bank.num_classes(),
        });
    }
    let n = batch.len();
    let dim = batch.dim();
    let num_classes = batch.num_classes();
    let two = F::of(2.0);

    let mut value = F::zero();
    let mut per_sample = vec![F::zero(); n];
    let mut grad_embeddings = vec![vec![F::zero(); dim]; n];
    let mut grad_centroids = vec![vec![F::zero(); dim]; num_classes];
    let mut grad_epsilon = vec![F::zero(); num_classes];

    for (class, members) in batch.indices_by_class().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mu = bank.centroid(class)?;
        let w = batch.weight(class);
        let m_c = F::of(members.len() as f64);
        let eps_c = eps[class];

        // Distances and unit directions u_j = (z_j − μ̂_c)/d_j for the whole
        // batch against this class centroid. A sample sitting exactly on the
        // centroid gets direction 0 (a valid subgradient of the distance).
        let mut dist = vec![F::zero(); n];
        let mut shifted = vec![F::zero(); n];
        let mut unit = vec![vec![F::zero(); dim]; n];
        for j in 0..n {
            let z = &batch.embeddings()[j];
            let d = euclidean_distance(mu, z)?;
            dist[j] = d;
            if d > F::zero() {
                for (u, (&zx, &mx)) in unit[j].iter_mut().zip(z.iter().zip(mu)) {
                    *u = (zx - mx) / d;
                }
            }
            let delta = if batch.labels()[j] == class {
                F::one()
            } else {
                F::zero()
            };
            shifted[j] = -d + den_sign * two * eps_c * delta;
        }
        let lse = log_sum_exp(&shifted);
        // Block softmax p_j and same-class mass.
        let mut p = vec![F::zero(); n];
        let mut same_class_mass = F::zero();
        for j in 0..n {
            p[j] = (shifted[j] - lse).exp();
            if batch.labels()[j] == class {
                same_class_mass += p[j];
            }
        }

        for &k in &members {
            let sample_value = dist[k] + num_sign * two * eps_c + lse;
            per_sample[k] = sample_value;
            value += w * sample_value;
        }

        // ∂/∂z_j: the member indicator minus m_c times the softmax mass,
        // along the unit direction.
        for j in 0..n {
            let indicator = if batch.labels()[j] == class {
                F::one()
            } else {
                F::zero()
            };
            let coeff = w * (indicator - m_c * p[j]);
            for (g, &u) in grad_embeddings[j].iter_mut().zip(&unit[j]) {
                *g += coeff * u;
            }
        }
        // ∂/∂μ̂_c: members pull with −u, the softmax pushes back with +u.
        for &k in &members {
            for (g, &u) in grad_centroids[class].iter_mut().zip(&unit[k]) {
                *g -= w * u;
            }
        }
        for j in 0..n {
            let coeff = w * m_c * p[j];
            for (g, &u) in grad_centroids[class].iter_mut().zip(&unit[j]) {
                *g += coeff * u;
            }
        }
        // ∂/∂ε_c = w · m_c · 2·(num_sign + den_sign · same-class mass).
        if epsilon_grads {
            grad_epsilon[class] = w * m_c * two * (num_sign + den_sign * same_class_mass);
        }
    }

    Ok(LossResult {
        value,
        per_sample,
        grad_embeddings,
        grad_centroids,
        grad_epsilon,
    })
}
