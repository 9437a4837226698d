//! Uncertainty-radius policies.
//!
//! Every class gets a radius ε_c for the ball around its empirical centroid
//! that the robust loss defends against. Three policies:
//!
//! - **shared** — one radius for all classes;
//! - **sqrt-n** — `value / sqrt(n_c)`, shrinking with class count to match
//!   how fast an empirical mean concentrates;
//! - **learned** — one trainable parameter per class, passed through a
//!   softplus so the derived radius can never go negative.
//!
//! The shared and sqrt-n values are interpreted directly as metric radii (the
//! quantity the loss consumes); converting a KL-ball radius into a metric one
//! is [`crate::geometry::radius_from_divergence`]'s job.

use crate::scalar::Real;
use crate::{Error, Result};

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: `ln(e^y - 1)` for `y > 0`.
pub fn softplus_inverse<F: Real>(y: F) -> Result<F> {
    if y <= F::zero() || !y.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "softplus inverse needs a positive finite input, got {y}"
        )));
    }
    // For large y the subtraction of 1 is lost in rounding; softplus(y) = y
    // there anyway.
    if y > F::of(30.0) {
        Ok(y)
    } else {
        Ok(y.exp_m1().ln())
    }
}

/// Numerically stable logistic function (the softplus derivative).
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Per-class uncertainty-radius policy.
#[derive(Debug, Clone)]
pub enum EpsilonPolicy<F: Real> {
    /// Every class uses the same fixed radius.
    Shared { value: F, num_classes: usize },
    /// Class `c` uses `value / sqrt(counts[c])`.
    SqrtN { value: F, counts: Vec<usize> },
    /// Class `c` uses `softplus(params[c])` with trainable `params`.
    Learned { params: Vec<F> },
}

impl<F: Real> EpsilonPolicy<F> {
    /// Fixed shared radius (`value >= 0`).
    pub fn shared(value: F, num_classes: usize) -> Result<Self> {
        check_radius(value)?;
        check_classes(num_classes)?;
        Ok(EpsilonPolicy::Shared { value, num_classes })
    }

    /// Count-scaled radius `value / sqrt(n_c)`; every count must be positive.
    pub fn sqrt_n(value: F, counts: Vec<usize>) -> Result<Self> {
        check_radius(value)?;
        check_classes(counts.len())?;
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "sqrt-n policy needs a positive count for every class; class {c} has 0"
            )));
        }
        Ok(EpsilonPolicy::SqrtN { value, counts })
    }

    /// Learned per-class radii, all initialized so that
    /// `softplus(param) = init` exactly (`init > 0`).
    pub fn learned(init: F, num_classes: usize) -> Result<Self> {
        check_classes(num_classes)?;
        let rho = softplus_inverse(init)?;
        Ok(EpsilonPolicy::Learned {
            params: vec![rho; num_classes],
        })
    }

    /// Rebuilds a learned policy from raw parameters (checkpoint restore).
    pub fn learned_from_params(params: Vec<F>) -> Result<Self> {
        check_classes(params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "learned epsilon parameters".into(),
            });
        }
        Ok(EpsilonPolicy::Learned { params })
    }

    pub fn num_classes(&self) -> usize {
        match self {
            EpsilonPolicy::Shared { num_classes, .. } => *num_classes,
            EpsilonPolicy::SqrtN { counts, .. } => counts.len(),
            EpsilonPolicy::Learned { params } => params.len(),
        }
    }

    /// The radius the loss uses for `class`. Always `>= 0`.
    pub fn epsilon_for_class(&self, class: usize) -> Result<F> {
        if class >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: class,
                num_classes: self.num_classes(),
            });
        }
        Ok(match self {
            EpsilonPolicy::Shared { value, .. } => *value,
            EpsilonPolicy::SqrtN { value, counts } => *value / F::of(counts[class] as f64).sqrt(),
            EpsilonPolicy::Learned { params } => softplus(params[class]),
        })
    }

    /// All per-class radii, ascending class order.
    pub fn all_epsilons(&self) -> Vec<F> {
        (0..self.num_classes())
            .map(|c| self.epsilon_for_class(c).expect("class id in range"))
            .collect()
    }

    /// `true` for the learned variant (the only one that consumes gradients).
    pub fn is_learned(&self) -> bool {
        matches!(self, EpsilonPolicy::Learned { .. })
    }

    /// Raw learned parameters (checkpointing); error for other variants.
    pub fn params(&self) -> Result<&[F]> {
        match self {
            EpsilonPolicy::Learned { params } => Ok(params),
            _ => Err(Error::WrongPolicy { required: "learned" }),
        }
    }

    /// Converts gradients w.r.t. the radii ε_c into gradients w.r.t. the raw
    /// parameters via the softplus chain rule `dε/dρ = sigmoid(ρ)`.
    pub fn param_grad(&self, grad_epsilon: &[F]) -> Result<Vec<F>> {
        match self {
            EpsilonPolicy::Learned { params } => {
                if grad_epsilon.len() != params.len() {
                    return Err(Error::DimensionMismatch {
                        expected: params.len(),
                        got: grad_epsilon.len(),
                    });
                }
                Ok(params
                    .iter()
                    .zip(grad_epsilon)
                    .map(|(&rho, &g)| g * sigmoid(rho))
                    .collect())
            }
            _ => Err(Error::WrongPolicy { required: "learned" }),
        }
    }

    /// One SGD step on the raw parameters given gradients w.r.t. the radii.
    /// Only valid for the learned variant; the derived radii stay positive by
    /// construction of the softplus.
    pub fn update_learned(&mut self, grad_epsilon: &[F], lr: F) -> Result<()> {
        if lr <= F::zero() || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {lr}"
            )));
        }
        let step: Vec<F> = self.param_grad(grad_epsilon)?;
        match self {
            EpsilonPolicy::Learned { params } => {
                for (rho, g) in params.iter_mut().zip(step) {
                    *rho = *rho - lr * g;
                }
                Ok(())
            }
            _ => unreachable!("param_grad already rejected non-learned variants"),
        }
    }

    /// Configuration spelling of the variant.
    pub fn variant_name(&self) -> &'static str {
        match self {
            EpsilonPolicy::Shared { .. } => "shared",
            EpsilonPolicy::SqrtN { .. } => "sqrt_n",
            EpsilonPolicy::Learned { .. } => "learned",
        }
    }
}

fn check_radius<F: Real>(value: F) -> Result<()> {
    if value < F::zero() || !value.is_finite() {
        return Err(Error::NegativeRadius {
            got: value.as_f64(),
        });
    }
    Ok(())
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument(
            "a radius policy needs at least one class".into(),
        ));
    }
    Ok(())
}
