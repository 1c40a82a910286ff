//! Central-finite-difference gradient checking.
//!
//! The independent oracle for the reverse pass: every analytic gradient in
//! this crate is validated against `(f(x + h) - f(x - h)) / 2h`. The returned
//! figure is the max over checked entries of `|ad - fd| / max(1, |fd|)` —
//! relative where gradients are large, absolute where they vanish.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::nn::HasParams;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

fn error_figure(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / fd.abs().max(1.0)
}

/// Check gradients of a scalar-valued recording with respect to every
/// trainable parameter of `model`.
///
/// `record` must deterministically build the loss from the model's *current*
/// parameter values on the supplied tape. Parameters are perturbed in place
/// and restored exactly (the original bits are put back).
///
/// `entries_per_tensor` bounds how many entries of each parameter tensor are
/// probed (chosen with `rng`); `None` probes all of them.
pub fn finite_diff_check_params<M: HasParams>(
    model: &mut M,
    record: impl Fn(&Tape, &M) -> Var,
    step: f64,
    entries_per_tensor: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let tape = Tape::new();
    let loss = record(&tape, model);
    let grads = tape.backward(loss).expect("finite_diff_check loss must be scalar");

    // Snapshot trainable parameter names and sizes.
    let mut specs: Vec<(String, usize)> = Vec::new();
    model.visit_params(&mut |p| {
        if p.trainable() {
            specs.push((p.name().to_string(), p.value().len()));
        }
    });

    let mut max_err = 0.0_f64;
    for (name, len) in specs {
        let entries: Vec<usize> = match entries_per_tensor {
            Some(k) if k < len => {
                let mut picked: Vec<usize> = (0..k).map(|_| rng.gen_range(0..len)).collect();
                picked.sort_unstable();
                picked.dedup();
                picked
            }
            _ => (0..len).collect(),
        };
        for entry in entries {
            let original = read_param_entry(model, &name, entry);
            write_param_entry(model, &name, entry, original + step);
            let plus = eval_scalar(&record, model);
            write_param_entry(model, &name, entry, original - step);
            let minus = eval_scalar(&record, model);
            write_param_entry(model, &name, entry, original);

            let fd = (plus - minus) / (2.0 * step);
            let ad = grads
                .param(&name)
                .map(|g| g.data()[entry])
                .unwrap_or(0.0);
            max_err = max_err.max(error_figure(ad, fd));
        }
    }
    max_err
}

/// Check gradients of a scalar-valued recording with respect to free input
/// tensors (not parameters). `record` receives one leaf per input, in order.
pub fn finite_diff_check_inputs(
    record: impl Fn(&Tape, &[Var]) -> Var,
    inputs: &[Tensor],
    step: f64,
) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = record(&tape, &leaves);
    let grads = tape.backward(loss).expect("finite_diff_check loss must be scalar");

    let mut max_err = 0.0_f64;
    for (which, input) in inputs.iter().enumerate() {
        for entry in 0..input.len() {
            let mut work: Vec<Tensor> = inputs.to_vec();
            work[which].data_mut()[entry] = input.data()[entry] + step;
            let plus = eval_inputs(&record, &work);
            work[which].data_mut()[entry] = input.data()[entry] - step;
            let minus = eval_inputs(&record, &work);

            let fd = (plus - minus) / (2.0 * step);
            let ad = grads
                .wrt(leaves[which])
                .map(|g| g.data()[entry])
                .unwrap_or(0.0);
            max_err = max_err.max(error_figure(ad, fd));
        }
    }
    max_err
}

fn eval_scalar<M: HasParams>(record: &impl Fn(&Tape, &M) -> Var, model: &M) -> f64 {
    let tape = Tape::new();
    let loss = record(&tape, model);
    tape.scalar_value(loss)
}

fn eval_inputs(record: &impl Fn(&Tape, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = record(&tape, &leaves);
    tape.scalar_value(loss)
}

fn read_param_entry<M: HasParams>(model: &M, name: &str, entry: usize) -> f64 {
    let mut out = None;
    model.visit_params(&mut |p| {
        if p.name() == name {
            out = Some(p.value().data()[entry]);
        }
    });
    out.unwrap_or_else(|| panic!("parameter {name} not found"))
}

fn write_param_entry<M: HasParams>(model: &mut M, name: &str, entry: usize, value: f64) {
    let mut found = false;
    model.visit_params_mut(&mut |p| {
        if p.name() == name {
            p.value_mut().data_mut()[entry] = value;
            found = true;
        }
    });
    assert!(found, "parameter {name} not found");
}
