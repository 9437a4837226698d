//! A small MLP with closed-form backprop: the representation network the
//! experiments train.
//!
//! Architecture: `input → [affine + activation]* → affine embedding → affine
//! logits`. The embedding layer is purely affine so an identity-configured
//! net maps inputs straight through, and the default activation (tanh) is
//! smooth so finite-difference gradient checks are clean; ReLU exists behind
//! a config switch for piecewise-linear experiments.
//!
//! Two gradient streams can be injected at once — one on the embeddings (the
//! robust loss) and one on the logits (cross-entropy) — and [`Network::backward`]
//! merges them through the classifier head. The optimizer is SGD with
//! momentum (`v ← m·v + g; θ ← θ − lr·v`); velocity buffers live on the
//! network so checkpoints capture the full optimizer state. Freezing the
//! backbone stops every parameter before the classifier head (their velocity
//! buffers freeze too).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::scalar::Real;
use crate::{Error, Result};

/// Elementwise nonlinearity for the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Smooth default; finite-difference checks behave everywhere.
    Tanh,
    /// Piecewise-linear option; gradient checks must stay away from 0.
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?} (expected tanh | relu)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(F::zero()),
        }
    }

    /// Derivative expressed through the *post*-activation value.
    fn derivative_from_output<F: Real>(self, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// One affine map `y = W x + b` with `W` stored row-major (out × in).
#[derive(Debug, Clone)]
struct Affine<F: Real> {
    w: Vec<Vec<F>>,
    b: Vec<F>,
}

impl<F: Real> Affine<F> {
    fn seeded(rng: &mut ChaCha12Rng, fan_in: usize, fan_out: usize) -> Self {
        // Fan-in-scaled uniform init for both weights and biases.
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || F::of(rng.random_range(-bound..bound));
        let w = (0..fan_out)
            .map(|_| (0..fan_in).map(|_| draw()).collect())
            .collect();
        let b = (0..fan_out).map(|_| draw()).collect();
        Self { w, b }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: vec![vec![F::zero(); self.w[0].len()]; self.w.len()],
            b: vec![F::zero(); self.b.len()],
        }
    }

    fn forward(&self, x: &[F]) -> Vec<F> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, &b)| row.iter().zip(x).map(|(&w, &x)| w * x).sum::<F>() + b)
            .collect()
    }

    /// Accumulates parameter gradients for one sample and returns the
    /// gradient w.r.t. the layer input.
    fn backward_into(&self, x: &[F], g_out: &[F], acc: &mut Affine<F>) -> Vec<F> {
        for ((g_row, &g), b) in acc.w.iter_mut().zip(g_out).zip(&mut acc.b) {
            for (gw, &xv) in g_row.iter_mut().zip(x) {
                *gw += g * xv;
            }
            *b += g;
        }
        let mut g_in = vec![F::zero(); x.len()];
        for (row, &g) in self.w.iter().zip(g_out) {
            for (gi, &w) in g_in.iter_mut().zip(row) {
                *gi += w * g;
            }
        }
        g_in
    }

    fn param_count(&self) -> usize {
        self.w.len() * self.w[0].len() + self.b.len()
    }
}

/// The representation network plus classifier head and optimizer state.
#[derive(Debug, Clone)]
pub struct Network<F: Real> {
    hidden: Vec<Affine<F>>,
    embed: Affine<F>,
    classifier: Affine<F>,
    activation: Activation,
    dim_in: usize,
    frozen_backbone: bool,
    /// SGD momentum buffers, parallel to the flattened parameters.
    velocity: Vec<F>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<F: Real> {
    inputs: Vec<Vec<F>>,
    /// Post-activation hidden outputs, per layer then per sample.
    hidden: Vec<Vec<Vec<F>>>,
    pub embeddings: Vec<Vec<F>>,
    pub logits: Vec<Vec<F>>,
}

/// Parameter gradients in the network's flattened layout.
#[derive(Debug, Clone)]
pub struct Gradients<F: Real> {
    hidden: Vec<Affine<F>>,
    embed: Affine<F>,
    classifier: Affine<F>,
}

impl<F: Real> Gradients<F> {
    /// Largest absolute component (diagnostics for the NaN abort path).
    pub fn max_abs(&self) -> F {
        let layer_max = |a: &Affine<F>| {
            a.w.iter()
                .flatten()
                .chain(&a.b)
                .fold(F::zero(), |m, &g| m.max(g.abs()))
        };
        self.hidden
            .iter()
            .chain([&self.embed, &self.classifier])
            .fold(F::zero(), |m, a| m.max(layer_max(a)))
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for a in self.hidden.iter().chain([&self.embed, &self.classifier]) {
            for row in &a.w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&a.b);
        }
        out
    }
}

impl<F: Real> Network<F> {
    /// Builds a network with seeded fan-in-scaled uniform initialization.
    ///
    /// `widths` are the hidden layer sizes (may be empty), `dim_embed` the
    /// embedding dimension, `num_classes` the classifier width.
    pub fn new(
        dim_in: usize,
        widths: &[usize],
        dim_embed: usize,
        num_classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        for &d in [dim_in, dim_embed, num_classes]
            .iter()
            .chain(widths.iter())
        {
            if d == 0 {
                return Err(Error::InvalidArgument(
                    "every layer dimension must be positive".into(),
                ));
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut hidden = Vec::with_capacity(widths.len());
        let mut fan_in = dim_in;
        for &w in widths {
            hidden.push(Affine::seeded(&mut rng, fan_in, w));
            fan_in = w;
        }
        let embed = Affine::seeded(&mut rng, fan_in, dim_embed);
        let classifier = Affine::seeded(&mut rng, dim_embed, num_classes);
        let mut net = Self {
            hidden,
            embed,
            classifier,
            activation,
            dim_in,
            frozen_backbone: false,
            velocity: Vec::new(),
        };
        net.velocity = vec![F::zero(); net.param_count()];
        Ok(net)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_embed(&self) -> usize {
        self.embed.b.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.b.len()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|a| a.b.len()).collect()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.hidden
            .iter()
            .chain([&self.embed, &self.classifier])
            .map(Affine::param_count)
            .sum()
    }

    /// Freezes (or unfreezes) everything before the classifier head.
    pub fn freeze_backbone(&mut self, frozen: bool) {
        self.frozen_backbone = frozen;
    }

    pub fn backbone_frozen(&self) -> bool {
        self.frozen_backbone
    }

    /// Forward pass for a batch of inputs; caches per-layer activations.
    pub fn forward(&self, inputs: &[Vec<F>]) -> Result<Forward<F>> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for x in inputs {
            if x.len() != self.dim_in {
                return Err(Error::DimensionMismatch {
                    expected: self.dim_in,
                    got: x.len(),
                });
            }
        }
        let n = inputs.len();
        let mut hidden: Vec<Vec<Vec<F>>> = Vec::with_capacity(self.hidden.len());
        let mut current: Vec<Vec<F>> = inputs.to_vec();
        for layer in &self.hidden {
            let mut outs = Vec::with_capacity(n);
            for x in &current {
                let mut y = layer.forward(x);
                for v in &mut y {
                    *v = self.activation.apply(*v);
                }
                outs.push(y);
            }
            hidden.push(outs.clone());
            current = outs;
        }
        let embeddings: Vec<Vec<F>> = current.iter().map(|x| self.embed.forward(x)).collect();
        let logits: Vec<Vec<F>> = embeddings
            .iter()
            .map(|z| self.classifier.forward(z))
            .collect();
        Ok(Forward {
            inputs: inputs.to_vec(),
            hidden,
            embeddings,
            logits,
        })
    }

    /// Backprop with dual injection: `grad_embeddings` lands on the
    /// embedding output (robust loss), `grad_logits` on the logits
    /// (cross-entropy); the classifier head routes the logit stream back
    /// into the embedding before the shared backbone walk.
    pub fn backward(
        &self,
        fwd: &Forward<F>,
        grad_embeddings: &[Vec<F>],
        grad_logits: &[Vec<F>],
    ) -> Result<Gradients<F>> {
        let n = fwd.inputs.len();
        if grad_embeddings.len() != n || grad_logits.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: grad_embeddings.len().min(grad_logits.len()),
            });
        }
        let mut grads = Gradients {
            hidden: self.hidden.iter().map(Affine::zeros_like).collect(),
            embed: self.embed.zeros_like(),
            classifier: self.classifier.zeros_like(),
        };
        for k in 0..n {
            // Classifier head: logits stream produces its own parameter
            // gradient and a contribution to the embedding gradient.
            let g_from_logits =
                self.classifier
                    .backward_into(&fwd.embeddings[k], &grad_logits[k], &mut grads.classifier);
            let g_embed: Vec<F> = g_from_logits
                .iter()
                .zip(&grad_embeddings[k])
                .map(|(&a, &b)| a + b)
                .collect();
            // Embedding layer (affine only).
            let last_hidden = if self.hidden.is_empty() {
                &fwd.inputs[k]
            } else {
                &fwd.hidden[self.hidden.len() - 1][k]
            };
            let mut g = self
                .embed
                .backward_into(last_hidden, &g_embed, &mut grads.embed);
            // Hidden stack, walking backwards through the activations.
            for (i, layer) in self.hidden.iter().enumerate().rev() {
                let post = &fwd.hidden[i][k];
                for (gv, &y) in g.iter_mut().zip(post) {
                    *gv = *gv * self.activation.derivative_from_output(y);
                }
                let input = if i == 0 {
                    &fwd.inputs[k]
                } else {
                    &fwd.hidden[i - 1][k]
                };
                g = layer.backward_into(input, &g, &mut grads.hidden[i]);
            }
        }
        Ok(grads)
    }

    /// SGD with momentum: `v ← momentum·v + g; θ ← θ − lr·v`.
    ///
    /// With the backbone frozen only the classifier head moves; frozen
    /// parameters keep their velocity untouched as well.
    pub fn sgd_step(&mut self, grads: &Gradients<F>, lr: F, momentum: F) -> Result<()> {
        if lr <= F::zero() || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {lr}"
            )));
        }
        if momentum < F::zero() || momentum >= F::one() {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        let flat_grads = grads.flatten();
        if flat_grads.len() != self.velocity.len() {
            return Err(Error::DimensionMismatch {
                expected: self.velocity.len(),
                got: flat_grads.len(),
            });
        }
        let backbone_params = self.param_count() - self.classifier.param_count();
        let start = if self.frozen_backbone { backbone_params } else { 0 };
        for i in start..flat_grads.len() {
            self.velocity[i] = momentum * self.velocity[i] + flat_grads[i];
        }
        let mut flat = self.flatten_params();
        for i in start..flat.len() {
            flat[i] = flat[i] - lr * self.velocity[i];
        }
        self.load_params(&flat)
    }

    /// Per-layer activations for probing: hidden outputs, then the
    /// embedding, then the logits. The default 64/64/32-embedding net
    /// therefore exposes 4 probe layers.
    pub fn layer_activations(&self, inputs: &[Vec<F>]) -> Result<Vec<Vec<Vec<F>>>> {
        let fwd = self.forward(inputs)?;
        let mut layers = fwd.hidden;
        layers.push(fwd.embeddings);
        layers.push(fwd.logits);
        Ok(layers)
    }

    /// Number of probe layers ([`Network::layer_activations`] rows).
    pub fn num_probe_layers(&self) -> usize {
        self.hidden.len() + 2
    }

    /// All parameters in a fixed flattened order (hidden layers in order,
    /// then embedding, then classifier; each layer rows-then-bias).
    pub fn flatten_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for a in self.hidden.iter().chain([&self.embed, &self.classifier]) {
            for row in &a.w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&a.b);
        }
        out
    }

    /// Restores parameters from the flattened layout.
    pub fn load_params(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "network parameters".into(),
            });
        }
        let mut it = flat.iter();
        let layers: Vec<&mut Affine<F>> = self
            .hidden
            .iter_mut()
            .chain([&mut self.embed, &mut self.classifier])
            .collect();
        for a in layers {
            for row in &mut a.w {
                for v in row.iter_mut() {
                    *v = *it.next().expect("length checked");
                }
            }
            for v in &mut a.b {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Optimizer velocity in the same flattened order.
    pub fn velocity(&self) -> &[F] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<F>) -> Result<()> {
        if velocity.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: velocity.len(),
            });
        }
        self.velocity = velocity;
        Ok(())
    }

    /// Compact structural signature used for checkpoint integrity checks.
    pub fn signature(&self) -> String {
        format!(
            "in={} hidden={:?} embed={} classes={} act={}",
            self.dim_in,
            self.hidden_widths(),
            self.dim_embed(),
            self.num_classes(),
            self.activation.as_str()
        )
    }
}
