//! Per-sample and mini-batch loss gradients.

use alloc::vec::Vec;

use crate::adam::{adam_step, AdamState, ParamSet};
use crate::error::{domain_err, Result};
use crate::grad::{mse_loss, mse_loss_grad, network_backward};
use crate::network::{network_forward, NetworkParams};
use crate::{Real, Tensor};

/// One training example: network inputs and the ground-truth target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T> {
    pub lr_up: &'a Tensor<T>,
    pub guidance: &'a Tensor<T>,
    pub hr: &'a Tensor<T>,
}

/// MSE loss of one sample and its parameter gradient.
pub fn sample_loss_grad<T: Real>(params: &NetworkParams<T>, s: Sample<'_, T>) -> Result<(T, NetworkParams<T>)> {
    let tr = network_forward(s.lr_up, s.guidance, params)?;
    let loss = mse_loss(&tr.yhat, s.hr)?;
    let g = network_backward(&tr, params, &mse_loss_grad(&tr.yhat, s.hr)?)?;
    Ok((loss, g))
}

/// Mean of per-sample losses and gradients, summed in the given order.
///
/// Callers that compute the per-sample terms in parallel get bit-identical
/// results as long as they pass them here in batch order.
pub fn reduce_batch<T: Real>(per_sample: Vec<(T, NetworkParams<T>)>) -> Result<(T, NetworkParams<T>)> {
    let n = per_sample.len();
    let mut it = per_sample.into_iter();
    let Some((mut loss, mut grads)) = it.next() else {
        return Err(domain_err!("empty batch"));
    };
    for (l, g) in it {
        loss = loss + l;
        for (acc, part) in grads.param_slices_mut().into_iter().zip(g.param_slices()) {
            for (a, &b) in acc.iter_mut().zip(part) {
                *a = *a + b;
            }
        }
    }
    let inv = T::one() / T::of_f64(n as f64);
    for s in grads.param_slices_mut() {
        for v in s {
            *v = *v * inv;
        }
    }
    Ok((loss * inv, grads))
}

/// Sequential mini-batch loss and gradient.
pub fn batch_loss_grad<T: Real>(params: &NetworkParams<T>, batch: &[Sample<'_, T>]) -> Result<(T, NetworkParams<T>)> {
    let parts = batch
        .iter()
        .map(|&s| sample_loss_grad(params, s))
        .collect::<Result<Vec<_>>>()?;
    reduce_batch(parts)
}

/// Adam update followed by projecting thresholds back to `≥ 0`.
pub fn apply_update<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<NetworkParams<T>>,
) -> Result<()> {
    adam_step(params, grads, state)?;
    params.project_thresholds();
    Ok(())
}
