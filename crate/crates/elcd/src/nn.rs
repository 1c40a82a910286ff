//! Parameters, parameter visitors, and small dense networks.
//!
//! Models own their [`Parameter`]s directly as struct fields and expose them
//! to optimizers and serialization through [`HasParams`], a visitor that
//! walks parameters in declaration order. That order is deterministic and is
//! what the optimizer and the checkpoint format iterate over.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};

/// A named tensor of weights. Names are slash-free dotted paths unique within
/// one model (for example `elcd.p_s.layer0.w`); the tape uses them to route
/// gradients and checkpoints use them as keys.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        Parameter {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    /// A parameter excluded from gradient maps and optimizer updates.
    pub fn frozen(name: impl Into<String>, value: Tensor) -> Parameter {
        Parameter {
            name: name.into(),
            value,
            trainable: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn set_value(&mut self, value: Tensor) {
        assert_eq!(
            self.value.shape(),
            value.shape(),
            "parameter {} reassigned with shape {:?} (was {:?})",
            self.name,
            value.shape(),
            self.value.shape()
        );
        self.value = value;
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }
}

/// Deterministic, declaration-ordered parameter traversal.
pub trait HasParams {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    /// Total number of scalar entries across trainable parameters.
    fn trainable_len(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable() {
                n += p.value().len();
            }
        });
        n
    }
}

/// Uniform fan-in initialization: entries drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

// ── Linear layer ─────────────────────────────────────────────────────────────

/// Affine map `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            w: Parameter::new(
                format!("{prefix}.w"),
                uniform_fan_in(&[out_dim, in_dim], in_dim, rng),
            ),
            b: Parameter::new(format!("{prefix}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    /// All-zero weights and biases; the layer maps everything to zero.
    pub fn zeroed(prefix: &str, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            w: Parameter::new(format!("{prefix}.w"), Tensor::zeros(&[out_dim, in_dim])),
            b: Parameter::new(format!("{prefix}.b"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Var {
        tape.add(tape.matvec(tape.param(&self.w), x), tape.param(&self.b))
    }

    /// Value-only evaluation along the same summation order as the tape op,
    /// so both paths agree bit-for-bit.
    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.value().matvec_value(x);
        for (yi, bi) in y.iter_mut().zip(self.b.value().data()) {
            *yi += bi;
        }
        y
    }
}

impl HasParams for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

// ── Multi-layer perceptron ───────────────────────────────────────────────────

/// Dense feed-forward network with tanh activations between layers and a
/// linear final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths input-first, e.g. `[4, 16, 16, 4]`.
    /// `zero_final` zero-initializes the last layer so the network starts as
    /// the constant zero map (used where models must begin at a known field).
    pub fn new(prefix: &str, dims: &[usize], zero_final: bool, rng: &mut ChaCha8Rng) -> Mlp {
        assert!(dims.len() >= 2, "MLP needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let name = format!("{prefix}.layer{i}");
            let layer = if zero_final && i == dims.len() - 2 {
                Linear::zeroed(&name, dims[i], dims[i + 1])
            } else {
                Linear::new(&name, dims[i], dims[i + 1], rng)
            };
            layers.push(layer);
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("empty MLP").in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("empty MLP").out_dim()
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i != last {
                h = tape.tanh(h);
            }
        }
        h
    }

    pub fn forward_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_f64(&h);
            if i != last {
                for v in &mut h {
                    *v = v.tanh();
                }
            }
        }
        h
    }
}

impl HasParams for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        for layer in &self.layers {
            layer.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }
}
