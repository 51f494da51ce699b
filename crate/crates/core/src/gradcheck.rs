//! Finite-difference checking of the analytic network gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::ParamSet;
use crate::error::Result;
use crate::grad::{mse_loss, mse_loss_grad, network_backward};
use crate::network::{init_params, network_forward, NetConfig, NetworkParams};
use crate::Tensor;

/// Central differences `(f(θ+εe_i) − f(θ−εe_i)) / 2ε` for every coordinate of a
/// parameter set, in [`ParamSet`] order.
pub fn finite_diff_grad<P: ParamSet<f64>>(
    mut loss: impl FnMut(&P) -> Result<f64>,
    params: &P,
    eps: f64,
) -> Result<Vec<f64>> {
    let mut work = params.clone();
    let shape: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    let mut out = Vec::with_capacity(shape.iter().sum());
    for (si, &len) in shape.iter().enumerate() {
        for j in 0..len {
            let orig = work.param_slices()[si][j];
            work.param_slices_mut()[si][j] = orig + eps;
            let plus = loss(&work)?;
            work.param_slices_mut()[si][j] = orig - eps;
            let minus = loss(&work)?;
            work.param_slices_mut()[si][j] = orig;
            out.push((plus - minus) / (2.0 * eps));
        }
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub net: NetConfig,
    pub height: usize,
    pub width: usize,
    pub eps: f64,
    /// Resample parameters until every pre-activation is at least this far
    /// from an activation breakpoint.
    pub kink_margin: f64,
    pub max_resamples: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            net: NetConfig {
                k: 2,
                kernel_size: 3,
                stages_lmcsc: 2,
                stages_guidance: 2,
                tied_weights: false,
                init_std: 0.4,
                init_threshold: 0.05,
            },
            height: 8,
            width: 8,
            eps: 1e-5,
            kink_margin: 1e-3,
            max_resamples: 200,
            seed: 0,
        }
    }
}

/// Result for one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    /// Samples drawn before one cleared the breakpoint margin.
    pub attempts: usize,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Smallest distance of any pre-activation to a breakpoint of its activation.
fn kink_distance(params: &NetworkParams<f64>, y: &Tensor<f64>, omega: &Tensor<f64>) -> Result<f64> {
    let tr = network_forward(y, omega, params)?;
    let mut d = f64::INFINITY;
    for (t, pre) in tr.z_pre.iter().enumerate() {
        let g = params.guidance_stage(t).gamma;
        for &a in pre.as_slice() {
            d = d.min((a.abs() - g).abs());
        }
    }
    let side = tr.side_information();
    for (t, pre) in tr.u_pre.iter().enumerate() {
        let mu = params.lmcsc_stage(t).mu;
        for (&v, &s) in pre.as_slice().iter().zip(side.as_slice()) {
            let (v, s) = if s >= 0.0 { (v, s) } else { (-v, -s) };
            for b in [-2.0 * mu, 0.0, s, s + 2.0 * mu] {
                d = d.min((v - b).abs());
            }
        }
    }
    Ok(d)
}

/// Draw a small network and inputs, then compare analytic gradients of the
/// MSE loss against central differences.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    for attempt in 1..=cfg.max_resamples.max(1) {
        let params = init_params::<f64>(&cfg.net, rng.random())?;
        let mut img = || Tensor::from_fn(1, h, w, |_, _, _| rng.random_range(0.0..1.0));
        let (y, omega, target) = (img(), img(), img());
        if kink_distance(&params, &y, &omega)? < cfg.kink_margin && attempt < cfg.max_resamples {
            continue;
        }
        let loss_of = |p: &NetworkParams<f64>| -> Result<f64> {
            mse_loss(&network_forward(&y, &omega, p)?.yhat, &target)
        };
        let tr = network_forward(&y, &omega, &params)?;
        let loss = mse_loss(&tr.yhat, &target)?;
        let analytic = network_backward(&tr, &params, &mse_loss_grad(&tr.yhat, &target)?)?;
        let numeric = finite_diff_grad(loss_of, &params, cfg.eps)?;

        let mut checks = Vec::new();
        let mut offset = 0;
        for ((name, a), _) in analytic.named_params().into_iter().zip(params.param_slices()) {
            let mut worst = 0.0f64;
            let mut amax = 0.0f64;
            for (i, &an) in a.iter().enumerate() {
                worst = worst.max(relative_error(an, numeric[offset + i], 1e-6));
                amax = amax.max(an.abs());
            }
            offset += a.len();
            checks.push(ParamCheck {
                name,
                max_rel_error: worst,
                max_abs_analytic: amax,
            });
        }
        return Ok(GradcheckReport {
            params: checks,
            attempts: attempt,
            loss,
        });
    }
    unreachable!("the final attempt always returns")
}
