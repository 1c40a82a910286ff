//! Reverse-mode automatic differentiation on a recording tape.
//!
//! A [`Tape`] records every primitive operation applied to [`Var`] handles in
//! execution order (a Wengert list). [`Tape::backward`] replays the list in
//! reverse, accumulating vector-Jacobian products into per-node gradients and
//! collecting the gradients of trainable parameters into a [`GradientMap`].
//!
//! [`Tape::jvp_multi`] walks the same list *forward*, building the directional
//! derivative of recorded outputs with respect to one recorded leaf as new
//! tape nodes. Because the tangent of every primitive is itself expressed in
//! primitives, quantities like Jacobian matrices constructed this way remain
//! differentiable — gradients can flow through a Jacobian into the parameters
//! that shaped it, which is exactly what velocity pullback training requires.
//!
//! Determinism: node order, gradient accumulation order, and parameter-map
//! iteration order are all fixed by the recorded program, never by hash-map
//! iteration, so repeated runs are bit-identical.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linalg::LuFactors;
use crate::nn::Parameter;

/// Gradients keyed by parameter name, iteration order deterministic.
pub type GradientMap = BTreeMap<String, Tensor>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

enum Op {
    /// Constant or parameter input. `param` carries the parameter name when
    /// the leaf is a trainable parameter.
    Leaf { param: Option<String> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    /// Constant scalar times tensor.
    Scale(usize, f64),
    /// Tensor plus constant scalar (elementwise).
    AddScalar(usize),
    /// Recorded scalar times tensor.
    ScaleVar { scalar: usize, tensor: usize },
    Matmul(usize, usize),
    Matvec(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Slice { input: usize, offset: usize, len: usize },
    /// out[i] = in[perm[i]].
    Permute { input: usize, perm: Vec<usize> },
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    /// Euclidean norm of the flattened input.
    Norm(usize),
    /// Solution of `A y = b`; the LU factors are kept for the reverse pass.
    Solve { a: usize, b: usize, factors: LuFactors },
}

struct Node {
    op: Op,
    value: Tensor,
}

struct Inner {
    nodes: Vec<Node>,
    param_cache: HashMap<String, usize>,
}

/// Recording tape. Create one per loss evaluation (or per batch); it grows
/// with every operation and is dropped afterwards.
pub struct Tape {
    id: u64,
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Numerically stable softplus: `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid (the softplus derivative).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                param_cache: HashMap::new(),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        debug_assert!(
            value.all_finite(),
            "tape op produced a non-finite value: {value:?}"
        );
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, value });
        Var {
            tape_id: self.id,
            idx: inner.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(
            v.tape_id, self.id,
            "Var belongs to tape {} but was used on tape {}",
            v.tape_id, self.id
        );
        v.idx
    }

    fn val(&self, idx: usize) -> Tensor {
        self.inner.borrow().nodes[idx].value.clone()
    }

    /// Value of a recorded node (cloned).
    pub fn value(&self, v: Var) -> Tensor {
        let idx = self.check(v);
        self.val(idx)
    }

    /// Shape of a recorded node.
    pub fn shape(&self, v: Var) -> Vec<usize> {
        let idx = self.check(v);
        self.inner.borrow().nodes[idx].value.shape().to_vec()
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).value()
    }

    // ── Leaves ──────────────────────────────────────────────────────────────

    /// Record a constant (no gradient tracked).
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, t)
    }

    pub fn zeros(&self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn eye(&self, d: usize) -> Var {
        self.constant(Tensor::eye(d))
    }

    /// Record a parameter leaf. Trainable parameters are cached by name so a
    /// parameter used several times in one recording contributes a single
    /// leaf whose gradient accumulates across all uses.
    pub fn param(&self, p: &Parameter) -> Var {
        {
            let inner = self.inner.borrow();
            if let Some(&idx) = inner.param_cache.get(p.name()) {
                debug_assert_eq!(
                    inner.nodes[idx].value.shape(),
                    p.value().shape(),
                    "parameter {} re-registered with a different shape",
                    p.name()
                );
                return Var {
                    tape_id: self.id,
                    idx,
                };
            }
        }
        let op = Op::Leaf {
            param: p.trainable().then(|| p.name().to_string()),
        };
        let var = self.push(op, p.value().clone());
        self.inner
            .borrow_mut()
            .param_cache
            .insert(p.name().to_string(), var.idx);
        var
    }

    // ── Elementwise and scalar ops ──────────────────────────────────────────

    fn binary_elementwise(&self, op_name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> (usize, usize, Tensor) {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (self.val(ia), self.val(ib));
        assert!(
            ta.shape() == tb.shape() || (ta.is_scalar() && tb.is_scalar()),
            "{op_name}: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        (ia, ib, Tensor::new(ta.shape().to_vec(), data))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (ia, ib, v) = self.binary_elementwise("add", a, b, |x, y| x + y);
        self.push(Op::Add(ia, ib), v)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (ia, ib, v) = self.binary_elementwise("sub", a, b, |x, y| x - y);
        self.push(Op::Sub(ia, ib), v)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (ia, ib, v) = self.binary_elementwise("mul", a, b, |x, y| x * y);
        self.push(Op::Mul(ia, ib), v)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (ia, ib, v) = self.binary_elementwise("div", a, b, |x, y| x / y);
        self.push(Op::Div(ia, ib), v)
    }

    pub fn neg(&self, a: Var) -> Var {
        let ia = self.check(a);
        let mut v = self.val(ia);
        for x in v.data_mut() {
            *x = -*x;
        }
        self.push(Op::Neg(ia), v)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let ia = self.check(a);
        let mut v = self.val(ia);
        v.scale_in_place(c);
        self.push(Op::Scale(ia, c), v)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let ia = self.check(a);
        let mut v = self.val(ia);
        for x in v.data_mut() {
            *x += c;
        }
        self.push(Op::AddScalar(ia), v)
    }

    /// Recorded scalar times tensor: `scalar` must hold exactly one element.
    pub fn scale_var(&self, scalar: Var, tensor: Var) -> Var {
        let is = self.check(scalar);
        let it = self.check(tensor);
        let s = self.val(is);
        assert!(
            s.is_scalar(),
            "scale_var: scalar operand has shape {:?}",
            s.shape()
        );
        let c = s.value();
        let mut v = self.val(it);
        v.scale_in_place(c);
        self.push(
            Op::ScaleVar {
                scalar: is,
                tensor: it,
            },
            v,
        )
    }

    // ── Linear algebra ops ──────────────────────────────────────────────────

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (self.val(ia), self.val(ib));
        assert!(
            ta.is_matrix() && tb.is_matrix() && ta.cols() == tb.rows(),
            "matmul: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let v = ta.matmul_value(&tb);
        self.push(Op::Matmul(ia, ib), v)
    }

    pub fn matvec(&self, a: Var, x: Var) -> Var {
        let (ia, ix) = (self.check(a), self.check(x));
        let (ta, tx) = (self.val(ia), self.val(ix));
        assert!(
            ta.is_matrix() && tx.is_vector() && ta.cols() == tx.len(),
            "matvec: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tx.shape()
        );
        let v = Tensor::vector(&ta.matvec_value(tx.data()));
        self.push(Op::Matvec(ia, ix), v)
    }

    pub fn transpose(&self, a: Var) -> Var {
        let ia = self.check(a);
        let v = self.val(ia).transposed();
        self.push(Op::Transpose(ia), v)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let ia = self.check(a);
        let v = self.val(ia).reshaped(shape);
        self.push(Op::Reshape(ia), v)
    }

    /// Concatenate rank-1 tensors (and scalars, treated as length-1).
    pub fn concat(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let idxs: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let mut data = Vec::new();
        for &i in &idxs {
            let t = self.val(i);
            assert!(
                t.shape().len() <= 1,
                "concat expects vectors or scalars, got shape {:?}",
                t.shape()
            );
            data.extend_from_slice(t.data());
        }
        let v = Tensor::vector(&data);
        self.push(Op::Concat(idxs), v)
    }

    /// Contiguous slice of a rank-1 tensor.
    pub fn slice(&self, a: Var, offset: usize, len: usize) -> Var {
        let ia = self.check(a);
        let t = self.val(ia);
        assert!(
            t.is_vector() && offset + len <= t.len(),
            "slice [{offset}..{}] out of bounds for shape {:?}",
            offset + len,
            t.shape()
        );
        let v = Tensor::vector(&t.data()[offset..offset + len]);
        self.push(
            Op::Slice {
                input: ia,
                offset,
                len,
            },
            v,
        )
    }

    /// Reorder a vector: `out[i] = in[perm[i]]`.
    pub fn permute(&self, a: Var, perm: &[usize]) -> Var {
        let ia = self.check(a);
        let t = self.val(ia);
        assert!(
            t.is_vector() && t.len() == perm.len(),
            "permute of shape {:?} with permutation of length {}",
            t.shape(),
            perm.len()
        );
        debug_assert!(
            {
                let mut sorted = perm.to_vec();
                sorted.sort_unstable();
                sorted.iter().enumerate().all(|(i, &p)| i == p)
            },
            "permute indices {perm:?} are not a permutation"
        );
        let data: Vec<f64> = perm.iter().map(|&p| t.data()[p]).collect();
        self.push(
            Op::Permute {
                input: ia,
                perm: perm.to_vec(),
            },
            Tensor::vector(&data),
        )
    }

    // ── Nonlinearities ──────────────────────────────────────────────────────

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> (usize, Tensor) {
        let ia = self.check(a);
        let mut v = self.val(ia);
        for x in v.data_mut() {
            *x = f(*x);
        }
        (ia, v)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let (ia, v) = self.unary(a, f64::tanh);
        self.push(Op::Tanh(ia), v)
    }

    pub fn relu(&self, a: Var) -> Var {
        let (ia, v) = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(ia), v)
    }

    pub fn softplus(&self, a: Var) -> Var {
        let (ia, v) = self.unary(a, softplus);
        self.push(Op::Softplus(ia), v)
    }

    pub fn exp(&self, a: Var) -> Var {
        let (ia, v) = self.unary(a, f64::exp);
        self.push(Op::Exp(ia), v)
    }

    pub fn square(&self, a: Var) -> Var {
        let (ia, v) = self.unary(a, |x| x * x);
        self.push(Op::Square(ia), v)
    }

    // ── Reductions ──────────────────────────────────────────────────────────

    pub fn sum(&self, a: Var) -> Var {
        let ia = self.check(a);
        let v = self.val(ia);
        let s: f64 = v.data().iter().sum();
        self.push(Op::Sum(ia), Tensor::scalar(s))
    }

    pub fn mean(&self, a: Var) -> Var {
        let ia = self.check(a);
        let v = self.val(ia);
        assert!(!v.is_empty(), "mean of empty tensor");
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(ia), Tensor::scalar(s))
    }

    /// Euclidean norm of the flattened input. Not differentiable at zero; the
    /// reverse and tangent passes return zero gradients there.
    pub fn norm(&self, a: Var) -> Var {
        let ia = self.check(a);
        let v = self.val(ia);
        self.push(Op::Norm(ia), Tensor::scalar(v.norm()))
    }

    /// Inner product of two equal-length vectors.
    pub fn dot(&self, a: Var, b: Var) -> Var {
        self.sum(self.mul(a, b))
    }

    // ── Linear solve ────────────────────────────────────────────────────────

    /// Solve `A y = b` for a recorded square matrix and vector. The LU
    /// factors are stored so the reverse pass can run adjoint solves.
    pub fn solve(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (self.val(ia), self.val(ib));
        assert!(
            ta.is_matrix() && ta.rows() == ta.cols(),
            "solve: coefficient matrix has shape {:?}",
            ta.shape()
        );
        assert!(
            tb.is_vector() && tb.len() == ta.rows(),
            "solve: rhs shape {:?} for matrix {:?}",
            tb.shape(),
            ta.shape()
        );
        let factors = LuFactors::factor(&ta)?;
        let y = Tensor::vector(&factors.solve(tb.data()));
        Ok(self.push(Op::Solve { a: ia, b: ib, factors }, y))
    }

    // ── Reverse pass ────────────────────────────────────────────────────────

    /// Accumulate gradients of a scalar loss with respect to every node.
    /// Non-destructive: may be called repeatedly on the same recording with
    /// identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_idx = self.check(loss);
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let loss_val = &nodes[loss_idx].value;
        if !loss_val.is_scalar() {
            return Err(Error::DimensionMismatch {
                context: "backward loss (must be scalar)",
                expected: 1,
                got: loss_val.len(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss_idx] = Some(Tensor::new(loss_val.shape().to_vec(), vec![1.0]));

        fn acc(grads: &mut [Option<Tensor>], idx: usize, delta: &Tensor) {
            match &mut grads[idx] {
                Some(g) => g.add_assign(delta),
                slot @ None => *slot = Some(delta.clone()),
            }
        }
        fn acc_scaled(grads: &mut [Option<Tensor>], idx: usize, delta: &Tensor, c: f64) {
            let mut d = delta.clone();
            d.scale_in_place(c);
            acc(grads, idx, &d);
        }

        for idx in (0..=loss_idx).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc_scaled(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = Tensor::new(
                        ta.shape().to_vec(),
                        g.data().iter().zip(tb.data()).map(|(&gi, &bi)| gi * bi).collect(),
                    );
                    let gb = Tensor::new(
                        tb.shape().to_vec(),
                        g.data().iter().zip(ta.data()).map(|(&gi, &ai)| gi * ai).collect(),
                    );
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Div(a, b) => {
                    let tb = &nodes[*b].value;
                    let y = &node.value;
                    let ga = Tensor::new(
                        nodes[*a].value.shape().to_vec(),
                        g.data().iter().zip(tb.data()).map(|(&gi, &bi)| gi / bi).collect(),
                    );
                    let gb = Tensor::new(
                        tb.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .zip(tb.data())
                            .map(|((&gi, &yi), &bi)| -gi * yi / bi)
                            .collect(),
                    );
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Neg(a) => acc_scaled(&mut grads, *a, &g, -1.0),
                Op::Scale(a, c) => acc_scaled(&mut grads, *a, &g, *c),
                Op::AddScalar(a) => acc(&mut grads, *a, &g),
                Op::ScaleVar { scalar, tensor } => {
                    let s = nodes[*scalar].value.value();
                    let t = &nodes[*tensor].value;
                    let gs: f64 = g.data().iter().zip(t.data()).map(|(&gi, &ti)| gi * ti).sum();
                    acc(
                        &mut grads,
                        *scalar,
                        &Tensor::new(nodes[*scalar].value.shape().to_vec(), vec![gs]),
                    );
                    acc_scaled(&mut grads, *tensor, &g, s);
                }
                Op::Matmul(a, b) => {
                    let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = g.matmul_value(&tb.transposed());
                    let gb = ta.transposed().matmul_value(&g);
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Matvec(a, x) => {
                    let (ta, tx) = (&nodes[*a].value, &nodes[*x].value);
                    let (m, n) = (ta.rows(), ta.cols());
                    // Gradient w.r.t. the matrix is the outer product g x^T.
                    let mut ga = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        for j in 0..n {
                            ga.data_mut()[i * n + j] = g.data()[i] * tx.data()[j];
                        }
                    }
                    let gx = Tensor::vector(&ta.transposed().matvec_value(g.data()));
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *x, &gx);
                }
                Op::Transpose(a) => acc(&mut grads, *a, &g.transposed()),
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    acc(&mut grads, *a, &g.reshaped(&shape));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        let piece = Tensor::new(
                            nodes[p].value.shape().to_vec(),
                            g.data()[offset..offset + len].to_vec(),
                        );
                        acc(&mut grads, p, &piece);
                        offset += len;
                    }
                }
                Op::Slice { input, offset, len } => {
                    let mut ga = Tensor::zeros(nodes[*input].value.shape());
                    ga.data_mut()[*offset..*offset + *len].copy_from_slice(g.data());
                    acc(&mut grads, *input, &ga);
                }
                Op::Permute { input, perm } => {
                    let mut ga = Tensor::zeros(nodes[*input].value.shape());
                    for (i, &p) in perm.iter().enumerate() {
                        ga.data_mut()[p] += g.data()[i];
                    }
                    acc(&mut grads, *input, &ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = Tensor::new(
                        y.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gi, &yi)| gi * (1.0 - yi * yi))
                            .collect(),
                    );
                    acc(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let ta = &nodes[*a].value;
                    let ga = Tensor::new(
                        ta.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&gi, &ai)| if ai > 0.0 { gi } else { 0.0 })
                            .collect(),
                    );
                    acc(&mut grads, *a, &ga);
                }
                Op::Softplus(a) => {
                    let ta = &nodes[*a].value;
                    let ga = Tensor::new(
                        ta.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&gi, &ai)| gi * sigmoid(ai))
                            .collect(),
                    );
                    acc(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga = Tensor::new(
                        y.shape().to_vec(),
                        g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).collect(),
                    );
                    acc(&mut grads, *a, &ga);
                }
                Op::Square(a) => {
                    let ta = &nodes[*a].value;
                    let ga = Tensor::new(
                        ta.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&gi, &ai)| 2.0 * gi * ai)
                            .collect(),
                    );
                    acc(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = Tensor::filled(nodes[*a].value.shape(), g.value());
                    acc(&mut grads, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    let ga = Tensor::filled(nodes[*a].value.shape(), g.value() / n);
                    acc(&mut grads, *a, &ga);
                }
                Op::Norm(a) => {
                    let y = node.value.value();
                    if y > 0.0 {
                        let ta = &nodes[*a].value;
                        let c = g.value() / y;
                        let ga = Tensor::new(
                            ta.shape().to_vec(),
                            ta.data().iter().map(|&ai| c * ai).collect(),
                        );
                        acc(&mut grads, *a, &ga);
                    }
                }
                Op::Solve { a, b, factors } => {
                    // Adjoint of y = A^{-1} b:
                    //   w = A^{-T} g;   grad_b += w;   grad_A += -w y^T.
                    let w = factors.solve_transposed(g.data());
                    acc(&mut grads, *b, &Tensor::vector(&w));
                    let y = &node.value;
                    let n = y.len();
                    let mut ga = Tensor::zeros(&[n, n]);
                    for i in 0..n {
                        for j in 0..n {
                            ga.data_mut()[i * n + j] = -w[i] * y.data()[j];
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
            }
            grads[idx] = Some(g);
        }

        let mut params = GradientMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &grads[idx] {
                    params.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            node_grads: grads,
            params,
        })
    }

    // ── Forward (tangent) pass ──────────────────────────────────────────────

    /// Directional derivatives of `outputs` with respect to the recorded node
    /// `seed`, in the direction `seed_tangent` (a recorded value of the same
    /// shape as `seed`). Tangents are built as new tape nodes, so the results
    /// are themselves differentiable.
    ///
    /// Outputs that do not depend on `seed` yield constant zero tangents.
    pub fn jvp_multi(&self, seed: Var, seed_tangent: Var, outputs: &[Var]) -> Vec<Var> {
        let seed_idx = self.check(seed);
        let tangent_seed_idx = self.check(seed_tangent);
        {
            let inner = self.inner.borrow();
            assert_eq!(
                inner.nodes[seed_idx].value.shape(),
                inner.nodes[tangent_seed_idx].value.shape(),
                "jvp tangent shape mismatch: {:?} vs {:?}",
                inner.nodes[seed_idx].value.shape(),
                inner.nodes[tangent_seed_idx].value.shape()
            );
        }
        let limit = outputs
            .iter()
            .map(|&o| self.check(o))
            .max()
            .expect("jvp with no outputs");
        let snapshot = self.len();
        assert!(limit < snapshot);

        let mut tangents: Vec<Option<Var>> = vec![None; snapshot];
        tangents[seed_idx] = Some(Var {
            tape_id: self.id,
            idx: tangent_seed_idx,
        });

        for idx in (seed_idx + 1)..=limit {
            // Clone the op descriptor minimally; values referenced by builders
            // come from the tape itself.
            let tangent = self.tangent_of(idx, &tangents);
            tangents[idx] = tangent;
        }

        outputs
            .iter()
            .map(|&o| {
                tangents[self.check(o)].unwrap_or_else(|| {
                    let shape = self.shape(o);
                    self.zeros(&shape)
                })
            })
            .collect()
    }

    /// Convenience wrapper for a single output.
    pub fn jvp(&self, seed: Var, seed_tangent: Var, output: Var) -> Var {
        self.jvp_multi(seed, seed_tangent, &[output])[0]
    }

    fn at(&self, idx: usize) -> Var {
        Var {
            tape_id: self.id,
            idx,
        }
    }

    fn tangent_of(&self, idx: usize, tangents: &[Option<Var>]) -> Option<Var> {
        // Fetch enough op structure to build tangents without holding a borrow.
        enum Descr {
            None,
            Unary(&'static str, usize),
            Binary(&'static str, usize, usize),
            Scale(usize, f64),
            ScaleVar(usize, usize),
            Concat(Vec<usize>),
            Slice(usize, usize, usize),
            Permute(usize, Vec<usize>),
            Solve(usize, usize),
        }
        let d = {
            let inner = self.inner.borrow();
            match &inner.nodes[idx].op {
                Op::Leaf { .. } => Descr::None,
                Op::Add(a, b) => Descr::Binary("add", *a, *b),
                Op::Sub(a, b) => Descr::Binary("sub", *a, *b),
                Op::Mul(a, b) => Descr::Binary("mul", *a, *b),
                Op::Div(a, b) => Descr::Binary("div", *a, *b),
                Op::Matmul(a, b) => Descr::Binary("matmul", *a, *b),
                Op::Matvec(a, b) => Descr::Binary("matvec", *a, *b),
                Op::Neg(a) => Descr::Unary("neg", *a),
                Op::Scale(a, c) => Descr::Scale(*a, *c),
                Op::AddScalar(a) => Descr::Unary("addscalar", *a),
                Op::ScaleVar { scalar, tensor } => Descr::ScaleVar(*scalar, *tensor),
                Op::Transpose(a) => Descr::Unary("transpose", *a),
                Op::Reshape(a) => Descr::Unary("reshape", *a),
                Op::Concat(parts) => Descr::Concat(parts.clone()),
                Op::Slice { input, offset, len } => Descr::Slice(*input, *offset, *len),
                Op::Permute { input, perm } => Descr::Permute(*input, perm.clone()),
                Op::Tanh(a) => Descr::Unary("tanh", *a),
                Op::Relu(a) => Descr::Unary("relu", *a),
                Op::Softplus(a) => Descr::Unary("softplus", *a),
                Op::Exp(a) => Descr::Unary("exp", *a),
                Op::Square(a) => Descr::Unary("square", *a),
                Op::Sum(a) => Descr::Unary("sum", *a),
                Op::Mean(a) => Descr::Unary("mean", *a),
                Op::Norm(a) => Descr::Unary("norm", *a),
                Op::Solve { a, b, .. } => Descr::Solve(*a, *b),
            }
        };
        let t = |i: usize| tangents[i];
        match d {
            Descr::None => None,
            Descr::Binary(op, a, b) => {
                let (da, db) = (t(a), t(b));
                if da.is_none() && db.is_none() {
                    return None;
                }
                Some(match op {
                    "add" => match (da, db) {
                        (Some(x), Some(y)) => self.add(x, y),
                        (Some(x), None) => x,
                        (None, Some(y)) => y,
                        _ => unreachable!(),
                    },
                    "sub" => match (da, db) {
                        (Some(x), Some(y)) => self.sub(x, y),
                        (Some(x), None) => x,
                        (None, Some(y)) => self.neg(y),
                        _ => unreachable!(),
                    },
                    "mul" => {
                        let mut terms = Vec::new();
                        if let Some(x) = da {
                            terms.push(self.mul(x, self.at(b)));
                        }
                        if let Some(y) = db {
                            terms.push(self.mul(self.at(a), y));
                        }
                        sum_terms(self, terms)
                    }
                    "div" => {
                        // y = a/b: dy = da/b - db * y / b.
                        let mut terms = Vec::new();
                        if let Some(x) = da {
                            terms.push(self.div(x, self.at(b)));
                        }
                        if let Some(y) = db {
                            let num = self.mul(y, self.at(idx));
                            terms.push(self.neg(self.div(num, self.at(b))));
                        }
                        sum_terms(self, terms)
                    }
                    "matmul" => {
                        let mut terms = Vec::new();
                        if let Some(x) = da {
                            terms.push(self.matmul(x, self.at(b)));
                        }
                        if let Some(y) = db {
                            terms.push(self.matmul(self.at(a), y));
                        }
                        sum_terms(self, terms)
                    }
                    "matvec" => {
                        let mut terms = Vec::new();
                        if let Some(x) = da {
                            terms.push(self.matvec(x, self.at(b)));
                        }
                        if let Some(y) = db {
                            terms.push(self.matvec(self.at(a), y));
                        }
                        sum_terms(self, terms)
                    }
                    other => unreachable!("binary jvp {other}"),
                })
            }
            Descr::Unary(op, a) => {
                let da = t(a)?;
                Some(match op {
                    "neg" => self.neg(da),
                    "addscalar" => da,
                    "transpose" => self.transpose(da),
                    "reshape" => {
                        let shape = self.shape(self.at(idx));
                        self.reshape(da, &shape)
                    }
                    "tanh" => {
                        // d tanh = (1 - y^2) da, built from recorded values so
                        // the tangent stays differentiable.
                        let y = self.at(idx);
                        let ones = self.constant(Tensor::filled(&self.shape(y), 1.0));
                        let deriv = self.sub(ones, self.square(y));
                        self.mul(da, deriv)
                    }
                    "relu" => {
                        let a_val = self.value(self.at(a));
                        let mask = Tensor::new(
                            a_val.shape().to_vec(),
                            a_val.data().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
                        );
                        self.mul(da, self.constant(mask))
                    }
                    "softplus" => {
                        // sigmoid(a) expressed through tanh for stability:
                        // sigma(a) = 0.5 tanh(a/2) + 0.5.
                        let half = self.scale(self.at(a), 0.5);
                        let th = self.tanh(half);
                        let sig = self.add_scalar(self.scale(th, 0.5), 0.5);
                        self.mul(da, sig)
                    }
                    "exp" => self.mul(da, self.at(idx)),
                    "square" => self.scale(self.mul(self.at(a), da), 2.0),
                    "sum" => self.sum(da),
                    "mean" => self.mean(da),
                    "norm" => {
                        let y_val = self.scalar_value(self.at(idx));
                        if y_val == 0.0 {
                            self.constant(Tensor::scalar(0.0))
                        } else {
                            let num = self.sum(self.mul(self.at(a), da));
                            self.div(num, self.at(idx))
                        }
                    }
                    other => unreachable!("unary jvp {other}"),
                })
            }
            Descr::Scale(a, c) => t(a).map(|da| self.scale(da, c)),
            Descr::ScaleVar(s, v) => {
                let (ds, dv) = (t(s), t(v));
                if ds.is_none() && dv.is_none() {
                    return None;
                }
                let mut terms = Vec::new();
                if let Some(x) = ds {
                    terms.push(self.scale_var(x, self.at(v)));
                }
                if let Some(y) = dv {
                    terms.push(self.scale_var(self.at(s), y));
                }
                Some(sum_terms(self, terms))
            }
            Descr::Concat(parts) => {
                if parts.iter().all(|&p| t(p).is_none()) {
                    return None;
                }
                let pieces: Vec<Var> = parts
                    .iter()
                    .map(|&p| {
                        t(p).unwrap_or_else(|| {
                            let shape = self.shape(self.at(p));
                            self.zeros(&shape)
                        })
                    })
                    .collect();
                Some(self.concat(&pieces))
            }
            Descr::Slice(input, offset, len) => t(input).map(|da| self.slice(da, offset, len)),
            Descr::Permute(input, perm) => t(input).map(|da| self.permute(da, &perm)),
            Descr::Solve(a, b) => {
                // y = A^{-1} b: dy = A^{-1}(db - dA y).
                let (da, db) = (t(a), t(b));
                if da.is_none() && db.is_none() {
                    return None;
                }
                let rhs = match (da, db) {
                    (Some(dam), Some(dbv)) => self.sub(dbv, self.matvec(dam, self.at(idx))),
                    (Some(dam), None) => self.neg(self.matvec(dam, self.at(idx))),
                    (None, Some(dbv)) => dbv,
                    _ => unreachable!(),
                };
                Some(
                    self.solve(self.at(a), rhs)
                        .expect("matrix already factored once must factor again"),
                )
            }
        }
    }

    /// Build the Jacobian of a recorded vector `output` with respect to a
    /// recorded vector `input` as a tape value (shape `[out_len, in_len]`),
    /// by pushing one basis tangent per input coordinate.
    pub fn jacobian(&self, input: Var, output: Var) -> Var {
        let in_len = {
            let shape = self.shape(input);
            assert_eq!(shape.len(), 1, "jacobian input must be a vector, got {shape:?}");
            shape[0]
        };
        let out_len = {
            let shape = self.shape(output);
            assert_eq!(shape.len(), 1, "jacobian output must be a vector, got {shape:?}");
            shape[0]
        };
        let mut columns = Vec::with_capacity(in_len);
        for j in 0..in_len {
            let mut e = Tensor::zeros(&[in_len]);
            e.data_mut()[j] = 1.0;
            let tangent = self.constant(e);
            columns.push(self.jvp(input, tangent, output));
        }
        // Stack columns row-wise then transpose: rows of `stacked` are the
        // columns of the Jacobian.
        let flat = self.concat(&columns);
        let stacked = self.reshape(flat, &[in_len, out_len]);
        self.transpose(stacked)
    }
}

fn sum_terms(tape: &Tape, terms: Vec<Var>) -> Var {
    let mut iter = terms.into_iter();
    let first = iter.next().expect("sum_terms on empty list");
    iter.fold(first, |acc, v| tape.add(acc, v))
}

/// Result of a reverse pass: per-node gradients plus the per-parameter map.
pub struct Gradients {
    tape_id: u64,
    node_grads: Vec<Option<Tensor>>,
    params: GradientMap,
}

impl Gradients {
    /// Gradient with respect to an arbitrary recorded node (None when the
    /// loss does not depend on it).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.tape_id, self.tape_id, "gradient queried with foreign Var");
        self.node_grads.get(v.idx).and_then(|g| g.as_ref())
    }

    /// Gradient of one trainable parameter.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// All trainable-parameter gradients, iteration order deterministic.
    pub fn params(&self) -> &GradientMap {
        &self.params
    }

    pub fn into_params(self) -> GradientMap {
        self.params
    }
}
