//! Adam with bias correction over any flat parameter set.

use alloc::vec::Vec;

use crate::error::{domain_err, shape_err, Result};
use crate::Real;

/// A collection of parameter slices with a fixed layout.
pub trait ParamSet<T>: Clone {
    fn param_slices(&self) -> Vec<&[T]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [T]>;
    fn zeros_like(&self) -> Self;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

impl<T: Real> ParamSet<T> for Vec<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        alloc::vec![self.as_slice()]
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        alloc::vec![self.as_mut_slice()]
    }
    fn zeros_like(&self) -> Self {
        alloc::vec![T::zero(); self.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub step: u64,
    pub m: P,
    pub v: P,
    pub hyper: AdamHyper,
}

impl<P> AdamState<P> {
    pub fn new<T: Real>(params: &P, hyper: AdamHyper) -> Self
    where
        P: ParamSet<T>,
    {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            hyper,
        }
    }
}

fn same_layout<T>(a: &[&[T]], b: &[&[T]]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Real, P: ParamSet<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
) -> Result<()> {
    let h = state.hyper;
    if !(h.lr > 0.0) {
        return Err(domain_err!("learning rate must be positive, got {}", h.lr));
    }
    {
        let p = params.param_slices();
        let g = grads.param_slices();
        let m = state.m.param_slices();
        let v = state.v.param_slices();
        if !same_layout(&p, &g) || !same_layout(&p, &m) || !same_layout(&p, &v) {
            return Err(shape_err!("adam_step: parameter, gradient and moment layouts differ"));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of_f64(h.beta1), T::of_f64(h.beta2));
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr = T::of_f64(h.lr);
    let eps = T::of_f64(h.eps);

    let grads = grads.param_slices();
    let mut ms = state.m.param_slices_mut();
    let mut vs = state.v.param_slices_mut();
    for (((p, g), m), v) in params
        .param_slices_mut()
        .into_iter()
        .zip(grads)
        .zip(ms.iter_mut())
        .zip(vs.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
