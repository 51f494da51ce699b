//! The ℓ1-ℓ1 proximal operator with side information and the plain
//! soft-threshold.
//!
//! For a threshold `mu ≥ 0` and side information `s`, the operator is
//!
//! ```text
//! ξ_mu(v; s) = argmin_x ½(x − v)² + mu·|x| + mu·|x − s|
//! ```
//!
//! which for `s ≥ 0` is the five-piece map
//!
//! ```text
//! v + 2mu   if v < −2mu
//! 0         if −2mu ≤ v ≤ 0
//! v         if 0 < v < s
//! s         if s ≤ v ≤ s + 2mu
//! v − 2mu   if v > s + 2mu
//! ```
//!
//! and for `s < 0` satisfies `ξ(v; s) = −ξ(−v; −s)`.

use crate::error::{domain_err, Result};
use crate::{FeatureMaps, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams<T> {
    pub mu: T,
}

impl<T: Real> ProxParams<T> {
    pub fn new(mu: T) -> Result<Self> {
        check_threshold(mu, "mu")?;
        Ok(Self { mu })
    }
}

fn check_threshold<T: Real>(t: T, name: &str) -> Result<()> {
    if !t.is_finite() || t < T::zero() {
        return Err(domain_err!("{name} must be finite and nonnegative, got {t}"));
    }
    Ok(())
}

fn check_finite<T: Real>(v: T, name: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(domain_err!("{name} must be finite, got {v}"));
    }
    Ok(())
}

/// Which linear piece of ξ a point falls on, after mirroring to `s ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    /// `v + 2mu`
    ShiftUp,
    /// `0`, the dead zone `[−2mu, 0]`
    Zero,
    /// `v`, strictly between `0` and `s`
    Identity,
    /// `s`, the band `[s, s + 2mu]`
    Clamp,
    /// `v − 2mu`
    ShiftDown,
}

/// Classify `(v, s)` with `s ≥ 0`. Closed boundaries go to the flat pieces.
#[inline]
fn piece<T: Real>(v: T, s: T, two_mu: T) -> Piece {
    if v < -two_mu {
        Piece::ShiftUp
    } else if v <= T::zero() {
        Piece::Zero
    } else if v < s {
        Piece::Identity
    } else if v <= s + two_mu {
        Piece::Clamp
    } else {
        Piece::ShiftDown
    }
}

/// ξ for `s ≥ 0`, no validation.
#[inline]
fn xi_nonneg<T: Real>(v: T, s: T, mu: T) -> T {
    let two_mu = mu + mu;
    match piece(v, s, two_mu) {
        Piece::ShiftUp => v + two_mu,
        Piece::Zero => T::zero(),
        Piece::Identity => v,
        Piece::Clamp => s,
        Piece::ShiftDown => v - two_mu,
    }
}

/// ξ without argument checks; the hot path of the solver and the network.
#[inline]
pub(crate) fn xi<T: Real>(v: T, s: T, mu: T) -> T {
    if s < T::zero() {
        -xi_nonneg(-v, -s, mu)
    } else {
        xi_nonneg(v, s, mu)
    }
}

#[inline]
pub(crate) fn shrink<T: Real>(v: T, theta: T) -> T {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        T::zero()
    }
}

/// Closed-form ℓ1-ℓ1 proximal operator ξ_mu(v; s).
pub fn prox_l1l1_scalar<T: Real>(v: T, s: T, p: ProxParams<T>) -> Result<T> {
    check_finite(v, "v")?;
    check_finite(s, "s")?;
    check_threshold(p.mu, "mu")?;
    Ok(xi(v, s, p.mu))
}

/// Reference minimiser used to validate [`prox_l1l1_scalar`].
///
/// The objective is piecewise quadratic with kinks at `0` and `s`; its
/// minimiser is either one of the kinks or the stationary point of one of
/// the three smooth pieces, so it is enough to compare the objective on
/// `{v + 2mu, v, v − 2mu, 0, s}`.
pub fn prox_l1l1_oracle<T: Real>(v: T, s: T, p: ProxParams<T>) -> Result<T> {
    check_finite(v, "v")?;
    check_finite(s, "s")?;
    check_threshold(p.mu, "mu")?;
    let mu = p.mu;
    let half = T::of_f64(0.5);
    let f = |x: T| half * (x - v) * (x - v) + mu * x.abs() + mu * (x - s).abs();
    let two_mu = mu + mu;
    let candidates = [v + two_mu, v, v - two_mu, T::zero(), s];
    let mut best = candidates[0];
    let mut best_val = f(best);
    for &c in &candidates[1..] {
        let val = f(c);
        if val < best_val {
            best = c;
            best_val = val;
        }
    }
    Ok(best)
}

/// Apply ξ_mu elementwise with side information `z`.
pub fn prox_l1l1_map<T: Real>(
    u: &FeatureMaps<T>,
    z: &FeatureMaps<T>,
    p: ProxParams<T>,
) -> Result<FeatureMaps<T>> {
    u.ensure_same_shape(z, "prox_l1l1_map")?;
    check_threshold(p.mu, "mu")?;
    if !u.all_finite() || !z.all_finite() {
        return Err(domain_err!("prox_l1l1_map: non-finite input"));
    }
    let mut out = u.clone();
    for (o, &s) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *o = xi(*o, s, p.mu);
    }
    Ok(out)
}

/// Gradient of ξ_mu(v; s) contracted with an upstream scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxGrad<T> {
    pub d_v: T,
    /// Derivative w.r.t. the side information; needed to backpropagate into
    /// the guidance branch.
    pub d_s: T,
    pub d_mu: T,
}

#[inline]
pub(crate) fn xi_vjp<T: Real>(v: T, s: T, mu: T, upstream: T) -> ProxGrad<T> {
    let (vv, ss, mirror) = if s < T::zero() {
        (-v, -s, true)
    } else {
        (v, s, false)
    };
    let two = T::of_f64(2.0);
    let zero = T::zero();
    let (dv, ds, dmu) = match piece(vv, ss, mu + mu) {
        Piece::ShiftUp => (T::one(), zero, two),
        Piece::Zero => (zero, zero, zero),
        Piece::Identity => (T::one(), zero, zero),
        Piece::Clamp => (zero, T::one(), zero),
        Piece::ShiftDown => (T::one(), zero, -two),
    };
    // ξ(v; s) = −ξ(−v; −s) flips the sign of the mu derivative only.
    let dmu = if mirror { -dmu } else { dmu };
    ProxGrad {
        d_v: upstream * dv,
        d_s: upstream * ds,
        d_mu: upstream * dmu,
    }
}

/// Vector-Jacobian product of ξ_mu at `(v, s)`.
///
/// Breakpoints take the derivative of the adjacent flat piece.
pub fn prox_l1l1_vjp<T: Real>(v: T, s: T, p: ProxParams<T>, upstream: T) -> Result<ProxGrad<T>> {
    check_finite(v, "v")?;
    check_finite(s, "s")?;
    check_threshold(p.mu, "mu")?;
    Ok(xi_vjp(v, s, p.mu, upstream))
}

/// `sign(v) · max(|v| − theta, 0)`.
pub fn soft_threshold<T: Real>(v: T, theta: T) -> Result<T> {
    check_threshold(theta, "theta")?;
    Ok(shrink(v, theta))
}

/// Apply [`soft_threshold`] elementwise.
pub fn soft_threshold_map<T: Real>(u: &FeatureMaps<T>, theta: T) -> Result<FeatureMaps<T>> {
    check_threshold(theta, "theta")?;
    Ok(u.map(|v| shrink(v, theta)))
}
