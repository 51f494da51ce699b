//! Reconstruction loss and reverse-mode gradients of the unfolded network.

use crate::adam::ParamSet;
use crate::conv::{conv2d_adjoint, conv2d_kernel_grad_into};
use crate::error::{shape_err, Result};
use crate::network::{ForwardTrace, NetworkParams};
use crate::prox::xi_vjp;
use crate::{Error, FeatureMaps, KernelBank, Real, Tensor};

/// Mean of squared elementwise differences.
pub fn mse_loss<T: Real>(yhat: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    yhat.ensure_same_shape(target, "mse_loss")?;
    let n = T::of_f64(yhat.len() as f64);
    let sum = yhat
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(sum / n)
}

/// `∂ mse_loss / ∂ yhat`.
pub fn mse_loss_grad<T: Real>(yhat: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    yhat.ensure_same_shape(target, "mse_loss_grad")?;
    let scale = T::of_f64(2.0 / yhat.len() as f64);
    let mut g = yhat.sub(target)?;
    for v in g.as_mut_slice() {
        *v = *v * scale;
    }
    Ok(g)
}

fn check_trace<T: Real>(trace: &ForwardTrace<T>, params: &NetworkParams<T>) -> Result<()> {
    let k = params.num_atoms();
    let (h, w) = trace.y.spatial();
    let ok = trace.z_iterates.len() == params.guidance_depth + 1
        && trace.z_pre.len() == params.guidance_depth
        && trace.z_reduced.len() == params.guidance_depth
        && trace.u_iterates.len() == params.lmcsc_depth + 1
        && trace.u_pre.len() == params.lmcsc_depth
        && trace.u_reduced.len() == params.lmcsc_depth
        && trace
            .z_iterates
            .iter()
            .chain(&trace.u_iterates)
            .all(|t| t.shape() == (k, h, w));
    if !ok {
        return Err(Error::Consistency(alloc::format!(
            "trace with {} guidance / {} LMCSC iterates does not belong to a {}+{} stage, k = {k} network",
            trace.z_iterates.len(),
            trace.u_iterates.len(),
            params.guidance_depth,
            params.lmcsc_depth
        )));
    }
    Ok(())
}

/// Backpropagate through `x − Q*(R*x) + P*input` given `∂/∂pre`.
///
/// Accumulates kernel gradients and returns `∂/∂x` (`None` when `x` was
/// the all-zero initial state, whose gradient is never needed).
#[allow(clippy::too_many_arguments)]
fn stage_linear_backward<T: Real>(
    g_pre: &Tensor<T>,
    x: &FeatureMaps<T>,
    reduced: Option<&Tensor<T>>,
    input: &Tensor<T>,
    q: &KernelBank<T>,
    r: &KernelBank<T>,
    gq: &mut KernelBank<T>,
    gr: &mut KernelBank<T>,
    gp: &mut KernelBank<T>,
) -> Result<Option<FeatureMaps<T>>> {
    conv2d_kernel_grad_into(input, g_pre, gp)?;
    let Some(rx) = reduced else {
        return Ok(None);
    };
    let neg = g_pre.scale(-T::one());
    conv2d_kernel_grad_into(rx, &neg, gq)?;
    let g_rx = conv2d_adjoint(&neg, q)?;
    conv2d_kernel_grad_into(x, &g_rx, gr)?;
    let mut g_x = conv2d_adjoint(&g_rx, r)?;
    g_x.add_assign(g_pre)?;
    Ok(Some(g_x))
}

/// Exact gradients of a scalar loss w.r.t. every network parameter, given
/// `loss_grad = ∂loss/∂Ŷ`.
///
/// Piecewise-linear activations use the flat-side derivative at their
/// breakpoints. With tied weights the per-stage contributions are summed.
pub fn network_backward<T: Real>(
    trace: &ForwardTrace<T>,
    params: &NetworkParams<T>,
    loss_grad: &Tensor<T>,
) -> Result<NetworkParams<T>> {
    params.validate()?;
    check_trace(trace, params)?;
    if loss_grad.shape() != trace.yhat.shape() {
        return Err(shape_err!(
            "loss gradient {:?} does not match output {:?}",
            loss_grad.shape(),
            trace.yhat.shape()
        ));
    }
    let mut grads = params.zeros_like();

    // decoder
    let codes = trace.codes();
    conv2d_kernel_grad_into(codes, loss_grad, &mut grads.decoder)?;
    let mut g_u = conv2d_adjoint(loss_grad, &params.decoder)?;

    // LMCSC encoder
    let side = trace.side_information();
    let (k, h, w) = side.shape();
    let mut g_side = Tensor::<T>::zeros(k, h, w);
    for t in (0..params.lmcsc_depth).rev() {
        let sp = params.lmcsc_stage(t);
        let pre = &trace.u_pre[t];
        let mut g_pre = Tensor::zeros(k, h, w);
        let mut g_mu = T::zero();
        for (((gp, gs), (&v, &s)), &up) in g_pre
            .as_mut_slice()
            .iter_mut()
            .zip(g_side.as_mut_slice())
            .zip(pre.as_slice().iter().zip(side.as_slice()))
            .zip(g_u.as_slice())
        {
            let d = xi_vjp(v, s, sp.mu, up);
            *gp = d.d_v;
            *gs = *gs + d.d_s;
            g_mu = g_mu + d.d_mu;
        }
        let gs = grads.lmcsc_stage_mut(t);
        gs.mu = gs.mu + g_mu;
        let next = stage_linear_backward(
            &g_pre,
            &trace.u_iterates[t],
            trace.u_reduced[t].as_ref(),
            &trace.y,
            &sp.q,
            &sp.r,
            &mut gs.q,
            &mut gs.r,
            &mut gs.p,
        )?;
        if let Some(g) = next {
            g_u = g;
        }
    }

    // guidance encoder
    let mut g_z = g_side;
    for t in (0..params.guidance_depth).rev() {
        let gp_params = params.guidance_stage(t);
        let gamma = gp_params.gamma;
        let pre = &trace.z_pre[t];
        let mut g_pre = Tensor::zeros(k, h, w);
        let mut g_gamma = T::zero();
        for ((gp, &a), &up) in g_pre
            .as_mut_slice()
            .iter_mut()
            .zip(pre.as_slice())
            .zip(g_z.as_slice())
        {
            if a > gamma {
                *gp = up;
                g_gamma = g_gamma - up;
            } else if a < -gamma {
                *gp = up;
                g_gamma = g_gamma + up;
            }
        }
        let gs = grads.guidance_stage_mut(t);
        gs.gamma = gs.gamma + g_gamma;
        let next = stage_linear_backward(
            &g_pre,
            &trace.z_iterates[t],
            trace.z_reduced[t].as_ref(),
            &trace.omega,
            &gp_params.q,
            &gp_params.r,
            &mut gs.q,
            &mut gs.r,
            &mut gs.p,
        )?;
        if let Some(g) = next {
            g_z = g;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, network_forward, GuidanceStageParams, NetConfig, StageParams};
    use alloc::vec;

    #[test]
    fn mse_examples() {
        let a = Tensor::from_rows(&[&[0.0, 1.0], &[2.0, 3.0]]).unwrap();
        let b = Tensor::from_rows(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 0.5);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v + 0.25);
        assert_eq!(mse_loss(&shifted, &a).unwrap(), 0.0625);
        assert!(mse_loss(&a, &Tensor::zeros(1, 2, 3)).is_err());
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let cfg = NetConfig {
            k: 2,
            kernel_size: 3,
            stages_lmcsc: 2,
            stages_guidance: 2,
            init_std: 0.3,
            init_threshold: 0.05,
            ..NetConfig::default()
        };
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let y = Tensor::from_fn(1, 5, 5, |_, i, j| (i * j) as f64 * 0.1);
        let tr = network_forward(&y, &y, &p).unwrap();
        let g = network_backward(&tr, &p, &Tensor::zeros(1, 5, 5)).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let cfg = NetConfig {
            k: 2,
            kernel_size: 3,
            stages_lmcsc: 2,
            stages_guidance: 1,
            ..NetConfig::default()
        };
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let y = Tensor::filled(1, 4, 4, 0.5);
        let tr = network_forward(&y, &y, &p).unwrap();
        let other = init_params::<f64>(&NetConfig { stages_lmcsc: 3, ..cfg }, 1).unwrap();
        assert!(matches!(
            network_backward(&tr, &other, &Tensor::zeros(1, 4, 4)),
            Err(Error::Consistency(_))
        ));
        assert!(network_backward(&tr, &p, &Tensor::zeros(1, 4, 3)).is_err());
    }

    /// One LMCSC and one guidance stage, k = 1, 1×1 kernels, one pixel:
    ///
    /// ```text
    /// a = pg·ω,  z = a − γ               (a > γ)
    /// b = p·y,   u = b                   (0 < b < z)
    /// ŷ = d·u,   loss = (ŷ − t)²
    /// ```
    #[test]
    fn single_pixel_chain_rule() {
        let k1 = |v: f64| KernelBank::from_vec(1, 1, 1, 1, vec![v]).unwrap();
        let (pg, gamma, p, mu, d) = (2.0, 0.1, 0.5, 0.05, 1.5);
        let (omega, y, target) = (0.8, 0.6, 1.0);
        let params = NetworkParams {
            lmcsc: vec![StageParams {
                q: k1(0.7),
                r: k1(-0.3),
                p: k1(p),
                mu,
            }],
            guidance: vec![GuidanceStageParams {
                q: k1(0.2),
                r: k1(0.4),
                p: k1(pg),
                gamma,
            }],
            decoder: k1(d),
            lmcsc_depth: 1,
            guidance_depth: 1,
            tied: false,
        };
        let yt = Tensor::from_rows(&[&[y]]).unwrap();
        let ot = Tensor::from_rows(&[&[omega]]).unwrap();
        let tr = network_forward(&yt, &ot, &params).unwrap();
        let z = pg * omega - gamma;
        let b = p * y;
        assert!(0.0 < b && b < z);
        assert_eq!(tr.yhat.as_slice(), &[d * b]);

        let tt = Tensor::from_rows(&[&[target]]).unwrap();
        let lg = mse_loss_grad(&tr.yhat, &tt).unwrap();
        let g = network_backward(&tr, &params, &lg).unwrap();
        let dl = 2.0 * (d * b - target);
        assert!((g.decoder.as_slice()[0] - dl * b).abs() < 1e-14);
        assert!((g.lmcsc[0].p.as_slice()[0] - dl * d * y).abs() < 1e-14);
        // identity piece: no dependence on mu or on the side information
        assert_eq!(g.lmcsc[0].mu, 0.0);
        assert_eq!(g.guidance[0].p.as_slice()[0], 0.0);
        assert_eq!(g.guidance[0].gamma, 0.0);
        // first stage starts from zero: Q and R never touch the output
        assert_eq!(g.lmcsc[0].q.as_slice()[0], 0.0);
        assert_eq!(g.lmcsc[0].r.as_slice()[0], 0.0);
    }

    /// Same as above but with `b` in the clamp band, so the output equals `z`
    /// and the gradient flows into the guidance branch.
    #[test]
    fn single_pixel_clamp_band_reaches_guidance() {
        let k1 = |v: f64| KernelBank::from_vec(1, 1, 1, 1, vec![v]).unwrap();
        let (pg, gamma, p, mu, d) = (1.0, 0.1, 2.0, 0.3, 1.5);
        let (omega, y, target) = (0.5, 0.3, 0.0);
        let params = NetworkParams {
            lmcsc: vec![StageParams {
                q: k1(0.0),
                r: k1(0.0),
                p: k1(p),
                mu,
            }],
            guidance: vec![GuidanceStageParams {
                q: k1(0.0),
                r: k1(0.0),
                p: k1(pg),
                gamma,
            }],
            decoder: k1(d),
            lmcsc_depth: 1,
            guidance_depth: 1,
            tied: false,
        };
        let tr = network_forward(
            &Tensor::from_rows(&[&[y]]).unwrap(),
            &Tensor::from_rows(&[&[omega]]).unwrap(),
            &params,
        )
        .unwrap();
        let z = pg * omega - gamma;
        let b = p * y;
        assert!(z <= b && b <= z + 2.0 * mu);
        let lg = mse_loss_grad(&tr.yhat, &Tensor::from_rows(&[&[target]]).unwrap()).unwrap();
        let g = network_backward(&tr, &params, &lg).unwrap();
        let dl = 2.0 * (d * z - target);
        assert!((g.guidance[0].p.as_slice()[0] - dl * d * omega).abs() < 1e-14);
        assert!((g.guidance[0].gamma - (-dl * d)).abs() < 1e-14);
        assert_eq!(g.lmcsc[0].p.as_slice()[0], 0.0);
    }
}
