//! Finite-difference verification of tape gradients.
//!
//! The checker rebuilds the computation from scratch for every perturbed
//! coordinate, so it is only meant for small test instances. It is the
//! independent oracle against which every differentiable operation in this
//! crate is validated.

use crate::error::{CoreError, Result};
use crate::numerics::tape::{NodeId, Tape, Tensor};

/// Builds a scalar computation from leaves handed to it in order.
pub type GraphBuilder<'a> = dyn FnMut(&mut Tape, &[NodeId]) -> Result<NodeId> + 'a;

/// Compares analytic gradients against central differences.
///
/// Returns the maximum over all input coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`. `eps` must lie in
/// [1e-6, 1e-3]; a non-finite objective value is a numeric error.
pub fn grad_check(f: &mut GraphBuilder<'_>, inputs: &[Tensor], eps: f64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(CoreError::domain(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }

    let eval = |f: &mut GraphBuilder<'_>, tensors: &[Tensor]| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.requires_grad = true;
                t.grad = None;
                tape.leaf(t)
            })
            .collect();
        let out = f(&mut tape, &ids)?;
        let value = tape.scalar_value(out);
        if !value.is_finite() {
            return Err(CoreError::numeric(format!("grad_check objective is non-finite: {value}")));
        }
        let grads = tape.backward(out)?;
        let collected = ids.iter().map(|id| grads.of(*id).map(|g| g.to_vec())).collect();
        Ok((value, collected))
    };

    let (_, analytic) = eval(f, inputs)?;

    let mut worst: f64 = 0.0;
    for (ti, tensor) in inputs.iter().enumerate() {
        let grad = analytic[ti].clone().unwrap_or_else(|| vec![0.0; tensor.len()]);
        for ci in 0..tensor.len() {
            let mut plus = inputs.to_vec();
            plus[ti].values[ci] += eps;
            let mut minus = inputs.to_vec();
            minus[ti].values[ci] -= eps;
            let (fp, _) = eval_value_only(f, &plus)?;
            let (fm, _) = eval_value_only(f, &minus)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad[ci];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn eval_value_only(f: &mut GraphBuilder<'_>, tensors: &[Tensor]) -> Result<(f64, ())> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = tensors
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = false;
            t.grad = None;
            tape.leaf(t)
        })
        .collect();
    let out = f(&mut tape, &ids)?;
    let value = tape.scalar_value(out);
    if !value.is_finite() {
        return Err(CoreError::numeric(format!("grad_check objective is non-finite: {value}")));
    }
    Ok((value, ()))
}
