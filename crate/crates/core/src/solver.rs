//! Iterative coupled convolutional sparse coding.
//!
//! Minimises
//!
//! ```text
//! ½‖Y − Σ_i D_i * U_i‖² + λ (Σ_i ‖U_i‖₁ + Σ_i ‖U_i − Z_i‖₁)
//! ```
//!
//! by proximal gradient steps carried out with convolutions:
//!
//! ```text
//! U ← ξ_{λ/L}( U − (1/L)·D̃ * (D * U) + (1/L)·D̃ * Y ; Z )
//! ```
//!
//! where `D̃` is the adjoint of the synthesis dictionary and `L` the largest
//! eigenvalue of `D̃ D`, estimated by power iteration.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_adjoint, dict_synthesize};
use crate::error::{domain_err, shape_err, Result};
use crate::prox::{shrink, xi};
use crate::{Error, FeatureMaps, KernelBank, Real, Tensor};

/// Safety factor applied to the power-iteration estimate when the problem
/// does not fix `L` itself.
pub const LIPSCHITZ_INFLATION: f64 = 1.01;

const POWER_ITERS: usize = 500;
const POWER_TOL: f64 = 1e-6;
const POWER_SEED: u64 = 0x1157_c0de;

#[derive(Debug, Clone)]
pub struct CSCProblem<T> {
    /// Single-channel target image.
    pub y: Tensor<T>,
    /// `k → 1` synthesis dictionary.
    pub dict: KernelBank<T>,
    /// Side-information codes, shape `(k, n1, n2)`.
    pub side: FeatureMaps<T>,
    pub lambda: T,
    /// Step-size constant; estimated from `dict` when `None`.
    pub lipschitz: Option<T>,
}

impl<T: Real> CSCProblem<T> {
    pub fn new(
        y: Tensor<T>,
        dict: KernelBank<T>,
        side: FeatureMaps<T>,
        lambda: T,
        lipschitz: Option<T>,
    ) -> Result<Self> {
        let prob = Self {
            y,
            dict,
            side,
            lambda,
            lipschitz,
        };
        prob.validate()?;
        Ok(prob)
    }

    /// Problem with all-zero side information (plain convolutional ISTA).
    pub fn unguided(y: Tensor<T>, dict: KernelBank<T>, lambda: T) -> Result<Self> {
        let (h, w) = y.spatial();
        let side = Tensor::zeros(dict.in_channels(), h, w);
        Self::new(y, dict, side, lambda, None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.channels() != 1 {
            return Err(shape_err!("target must be single-channel, got {:?}", self.y.shape()));
        }
        if self.dict.out_channels() != 1 {
            return Err(shape_err!("dictionary must be k→1, got {:?}", self.dict.shape()));
        }
        let (h, w) = self.y.spatial();
        let k = self.dict.in_channels();
        if self.side.shape() != (k, h, w) {
            return Err(shape_err!(
                "side information {:?} does not match ({k}, {h}, {w})",
                self.side.shape()
            ));
        }
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(domain_err!("lambda must be positive, got {}", self.lambda));
        }
        if let Some(l) = self.lipschitz {
            if !(l > T::zero()) || !l.is_finite() {
                return Err(domain_err!("L must be positive, got {l}"));
            }
        }
        Ok(())
    }

    pub fn num_atoms(&self) -> usize {
        self.dict.in_channels()
    }

    fn code_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.y.spatial();
        (self.num_atoms(), h, w)
    }

    /// `L` as given, or the inflated power-iteration estimate.
    pub fn resolve_lipschitz(&self) -> Result<T> {
        match self.lipschitz {
            Some(l) => Ok(l),
            None => {
                let est = estimate_lipschitz(
                    &self.dict,
                    self.y.spatial(),
                    POWER_ITERS,
                    T::of_f64(POWER_TOL),
                )?;
                Ok(est * T::of_f64(LIPSCHITZ_INFLATION))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveTrace<T> {
    /// `U^0, U^1, …, U^T`.
    pub iterates: Vec<FeatureMaps<T>>,
    /// Objective value at each iterate.
    pub objectives: Vec<T>,
    pub lipschitz: T,
}

impl<T: Real> SolveTrace<T> {
    pub fn last(&self) -> &FeatureMaps<T> {
        self.iterates.last().expect("trace always holds U^0")
    }
}

/// Value of the coupled objective at `codes`.
pub fn objective_l1l1<T: Real>(prob: &CSCProblem<T>, codes: &FeatureMaps<T>) -> Result<T> {
    if codes.shape() != prob.code_shape() {
        return Err(shape_err!(
            "codes {:?} do not match problem {:?}",
            codes.shape(),
            prob.code_shape()
        ));
    }
    let recon = dict_synthesize(codes, &prob.dict)?;
    let residual = prob.y.sub(&recon)?;
    let half = T::of_f64(0.5);
    let fit = half * residual.dot(&residual)?;
    let coupling = codes
        .as_slice()
        .iter()
        .zip(prob.side.as_slice())
        .fold(T::zero(), |acc, (&u, &z)| acc + (u - z).abs());
    Ok(fit + prob.lambda * (codes.norm_l1() + coupling))
}

/// Largest eigenvalue of `U ↦ D̃ * (D * U)` on `(k, n1, n2)` code maps.
///
/// Power iteration from a seeded random start; stops once successive
/// Rayleigh quotients differ by at most `tol` or after `iters` rounds.
pub fn estimate_lipschitz<T: Real>(
    dict: &KernelBank<T>,
    spatial: (usize, usize),
    iters: usize,
    tol: T,
) -> Result<T> {
    estimate_lipschitz_seeded(dict, spatial, iters, tol, POWER_SEED)
}

pub fn estimate_lipschitz_seeded<T: Real>(
    dict: &KernelBank<T>,
    spatial: (usize, usize),
    iters: usize,
    tol: T,
    seed: u64,
) -> Result<T> {
    if iters == 0 || !(tol > T::zero()) {
        return Err(domain_err!("power iteration needs iters ≥ 1 and tol > 0"));
    }
    if dict.out_channels() != 1 {
        return Err(shape_err!("dictionary must be k→1, got {:?}", dict.shape()));
    }
    if dict.is_zero() {
        return Err(Error::Degenerate("dictionary is all zero".into()));
    }
    let (h, w) = spatial;
    let k = dict.in_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Tensor::from_fn(k, h, w, |_, _, _| T::of_f64(rng.random_range(-1.0..1.0)));
    let n = v.norm_l2();
    v = v.scale(T::one() / n);
    let mut estimate = T::zero();
    for it in 0..iters {
        let av = conv2d_adjoint(&dict_synthesize(&v, dict)?, dict)?;
        let rayleigh = v.dot(&av)?;
        let norm = av.norm_l2();
        if norm.is_zero() {
            return Err(Error::Degenerate(
                "power iteration collapsed to the null space".into(),
            ));
        }
        v = av.scale(T::one() / norm);
        let converged = it > 0 && (rayleigh - estimate).abs() <= tol;
        estimate = rayleigh;
        if converged {
            break;
        }
    }
    Ok(estimate)
}

/// Precomputed pieces of one gradient step `U − (1/L) D̃ D U + (1/L) D̃ Y`.
struct GradientStep<'a, T> {
    dict: &'a KernelBank<T>,
    inv_l: T,
    scaled_adj_y: Tensor<T>,
}

impl<'a, T: Real> GradientStep<'a, T> {
    fn new(y: &Tensor<T>, dict: &'a KernelBank<T>, lipschitz: T) -> Result<Self> {
        let inv_l = T::one() / lipschitz;
        let scaled_adj_y = conv2d_adjoint(y, dict)?.scale(inv_l);
        Ok(Self {
            dict,
            inv_l,
            scaled_adj_y,
        })
    }

    fn apply(&self, codes: &FeatureMaps<T>) -> Result<FeatureMaps<T>> {
        let back = conv2d_adjoint(&dict_synthesize(codes, self.dict)?, self.dict)?;
        let mut v = codes.clone();
        for ((o, &b), &a) in v
            .as_mut_slice()
            .iter_mut()
            .zip(back.as_slice())
            .zip(self.scaled_adj_y.as_slice())
        {
            *o = *o - self.inv_l * b + a;
        }
        Ok(v)
    }
}

fn initial_codes<T: Real>(
    shape: (usize, usize, usize),
    init: Option<&FeatureMaps<T>>,
) -> Result<FeatureMaps<T>> {
    match init {
        Some(u0) if u0.shape() != shape => Err(shape_err!(
            "initial codes {:?} do not match {:?}",
            u0.shape(),
            shape
        )),
        Some(u0) => Ok(u0.clone()),
        None => Ok(Tensor::zeros(shape.0, shape.1, shape.2)),
    }
}

/// One coupled proximal-gradient iteration with step `1/lipschitz`.
pub fn coupled_iteration<T: Real>(
    prob: &CSCProblem<T>,
    codes: &FeatureMaps<T>,
    lipschitz: T,
) -> Result<FeatureMaps<T>> {
    prob.validate()?;
    let step = GradientStep::new(&prob.y, &prob.dict, lipschitz)?;
    let mu = prob.lambda / lipschitz;
    let mut v = step.apply(codes)?;
    for (o, &s) in v.as_mut_slice().iter_mut().zip(prob.side.as_slice()) {
        *o = xi(*o, s, mu);
    }
    Ok(v)
}

/// Run `iterations` coupled steps, reporting `(t, U^t, objective)` for every
/// iterate including `U^0`. Returns the final codes and the `L` used.
pub fn solve_coupled_csc_with<T: Real>(
    prob: &CSCProblem<T>,
    iterations: usize,
    init: Option<&FeatureMaps<T>>,
    mut observer: impl FnMut(usize, &FeatureMaps<T>, T),
) -> Result<(FeatureMaps<T>, T)> {
    prob.validate()?;
    if iterations == 0 {
        return Err(domain_err!("iteration count must be ≥ 1"));
    }
    let lipschitz = prob.resolve_lipschitz()?;
    let step = GradientStep::new(&prob.y, &prob.dict, lipschitz)?;
    let mu = prob.lambda / lipschitz;
    let mut codes = initial_codes(prob.code_shape(), init)?;
    observer(0, &codes, objective_l1l1(prob, &codes)?);
    for t in 1..=iterations {
        let mut v = step.apply(&codes)?;
        for (o, &s) in v.as_mut_slice().iter_mut().zip(prob.side.as_slice()) {
            *o = xi(*o, s, mu);
        }
        codes = v;
        observer(t, &codes, objective_l1l1(prob, &codes)?);
    }
    Ok((codes, lipschitz))
}

/// Coupled solve keeping every iterate and objective value.
pub fn solve_coupled_csc<T: Real>(
    prob: &CSCProblem<T>,
    iterations: usize,
    init: Option<&FeatureMaps<T>>,
) -> Result<SolveTrace<T>> {
    let mut iterates = Vec::with_capacity(iterations + 1);
    let mut objectives = Vec::with_capacity(iterations + 1);
    let (_, lipschitz) = solve_coupled_csc_with(prob, iterations, init, |_, u, obj| {
        iterates.push(u.clone());
        objectives.push(obj);
    })?;
    Ok(SolveTrace {
        iterates,
        objectives,
        lipschitz,
    })
}

/// Plain convolutional ISTA for `½‖Ω − Σ B_i * Z_i‖² + λ‖Z‖₁`, reporting
/// every iterate `Z^0 = 0, …, Z^T`.
///
/// Shrinkage is `soft_threshold(·, λ/L)`. With the same dictionary this
/// reproduces [`solve_coupled_csc`] on all-zero side information and weight
/// `λ/2` bit for bit, since the coupled penalty counts `‖U‖₁` twice there.
pub fn solve_csc_ista_with<T: Real>(
    omega: &Tensor<T>,
    dict: &KernelBank<T>,
    lambda: T,
    iterations: usize,
    mut observer: impl FnMut(usize, &FeatureMaps<T>),
) -> Result<FeatureMaps<T>> {
    let prob = CSCProblem::unguided(omega.clone(), dict.clone(), lambda)?;
    if iterations == 0 {
        return Err(domain_err!("iteration count must be ≥ 1"));
    }
    let lipschitz = prob.resolve_lipschitz()?;
    let step = GradientStep::new(omega, dict, lipschitz)?;
    let theta = lambda / lipschitz;
    let mut codes = initial_codes(prob.code_shape(), None)?;
    observer(0, &codes);
    for t in 1..=iterations {
        codes = step.apply(&codes)?.map(|v| shrink(v, theta));
        observer(t, &codes);
    }
    Ok(codes)
}

/// Sparse codes of `omega` w.r.t. `dict` after `iterations` ISTA steps.
pub fn solve_csc_ista<T: Real>(
    omega: &Tensor<T>,
    dict: &KernelBank<T>,
    lambda: T,
    iterations: usize,
) -> Result<FeatureMaps<T>> {
    solve_csc_ista_with(omega, dict, lambda, iterations, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic_coupled, SyntheticConfig};
    use alloc::vec;
    use nalgebra::DMatrix;

    fn random_problem(seed: u64, k: usize, h: usize, w: usize) -> CSCProblem<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = KernelBank::from_fn(1, k, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let y = Tensor::from_fn(1, h, w, |_, _, _| rng.random_range(-1.0..1.0));
        let side = Tensor::from_fn(k, h, w, |_, _, _| {
            if rng.random_bool(0.2) {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        CSCProblem::new(y, dict, side, 0.05, None).unwrap()
    }

    #[test]
    fn objective_examples() {
        let d = KernelBank::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        let zero = Tensor::<f64>::zeros(1, 1, 1);
        let p = CSCProblem::new(zero.clone(), d.clone(), zero.clone(), 1.0, None).unwrap();
        assert_eq!(objective_l1l1(&p, &zero).unwrap(), 0.0);

        let y = Tensor::from_rows(&[&[1.0]]).unwrap();
        let p = CSCProblem::new(y, d, zero, 1.0, None).unwrap();
        let u = Tensor::from_rows(&[&[0.5]]).unwrap();
        assert_eq!(objective_l1l1(&p, &u).unwrap(), 1.125);
    }

    #[test]
    fn objective_of_exact_code_is_sparsity_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = KernelBank::<f64>::from_fn(1, 2, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let u = Tensor::from_fn(2, 5, 5, |_, _, _| rng.random_range(-1.0..1.0));
        let y = dict_synthesize(&u, &d).unwrap();
        let p = CSCProblem::new(y, d, u.clone(), 0.3, None).unwrap();
        let obj = objective_l1l1(&p, &u).unwrap();
        assert!((obj - 0.3 * u.norm_l1()).abs() < 1e-12);
    }

    #[test]
    fn problem_validation() {
        let d = KernelBank::<f64>::from_vec(1, 2, 1, 1, vec![1.0, 1.0]).unwrap();
        let y = Tensor::zeros(1, 3, 3);
        assert!(CSCProblem::new(y.clone(), d.clone(), Tensor::zeros(1, 3, 3), 0.1, None).is_err());
        assert!(CSCProblem::new(y.clone(), d.clone(), Tensor::zeros(2, 3, 3), 0.0, None).is_err());
        assert!(CSCProblem::new(y.clone(), d.clone(), Tensor::zeros(2, 3, 3), 0.1, Some(-1.0)).is_err());
        assert!(CSCProblem::new(Tensor::zeros(2, 3, 3), d, Tensor::zeros(2, 3, 3), 0.1, None).is_err());
    }

    #[test]
    fn lipschitz_of_pointwise_dictionaries() {
        let d = KernelBank::from_vec(1, 1, 1, 1, vec![2.0f64]).unwrap();
        let l = estimate_lipschitz(&d, (4, 4), 100, 1e-12).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        let d = KernelBank::from_vec(1, 2, 1, 1, vec![1.0f64, 2.0]).unwrap();
        let l = estimate_lipschitz(&d, (4, 4), 200, 1e-12).unwrap();
        assert!((l - 5.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn zero_dictionary_is_degenerate() {
        let d = KernelBank::<f64>::zeros(1, 2, 3, 3).unwrap();
        assert!(matches!(
            estimate_lipschitz(&d, (4, 4), 10, 1e-6),
            Err(Error::Degenerate(_))
        ));
        assert!(estimate_lipschitz(&KernelBank::<f64>::delta(1, 1, 3).unwrap(), (4, 4), 0, 1e-6).is_err());
    }

    /// Materialise `A` column by column and take the top eigenvalue of `AᵀA`.
    fn dense_lipschitz(d: &KernelBank<f64>, h: usize, w: usize) -> f64 {
        let k = d.in_channels();
        let n = k * h * w;
        let mut a = DMatrix::<f64>::zeros(h * w, n);
        for col in 0..n {
            let mut e = Tensor::zeros(k, h, w);
            e.as_mut_slice()[col] = 1.0;
            let img = dict_synthesize(&e, d).unwrap();
            for (row, &v) in img.as_slice().iter().enumerate() {
                a[(row, col)] = v;
            }
        }
        let ata = a.transpose() * &a;
        ata.symmetric_eigenvalues().iter().cloned().fold(f64::MIN, f64::max)
    }

    #[test]
    fn lipschitz_matches_dense_eigenvalue() {
        let delta = KernelBank::<f64>::delta(1, 1, 3).unwrap();
        let want = dense_lipschitz(&delta, 4, 4);
        assert!((want - 1.0).abs() < 1e-12);
        let got = estimate_lipschitz(&delta, (4, 4), 100, 1e-6).unwrap();
        assert!((got - want).abs() <= 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let d = KernelBank::from_fn(1, 2, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
            let want = dense_lipschitz(&d, 5, 4);
            let got = estimate_lipschitz(&d, (5, 4), 5000, 1e-12).unwrap();
            assert!((got - want).abs() / want <= 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_problem_is_a_fixed_point() {
        let d = KernelBank::from_fn(1, 2, 3, 3, |_, c, a, b| (c + a * b) as f64 - 1.5).unwrap();
        let p = CSCProblem::unguided(Tensor::zeros(1, 5, 5), d, 0.1).unwrap();
        let trace = solve_coupled_csc(&p, 5, None).unwrap();
        assert_eq!(trace.iterates.len(), 6);
        assert_eq!(trace.objectives.len(), 6);
        for (u, &obj) in trace.iterates.iter().zip(&trace.objectives) {
            assert_eq!(u.max_abs(), 0.0);
            assert_eq!(obj, 0.0);
        }
    }

    #[test]
    fn objectives_never_increase() {
        let p = random_problem(3, 1, 8, 8);
        let trace = solve_coupled_csc(&p, 200, None).unwrap();
        for w in trace.objectives.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn converged_iterate_is_a_fixed_point() {
        // a large penalty keeps the active set small so convergence is fast
        let p = CSCProblem {
            lambda: 0.3,
            ..random_problem(4, 2, 6, 6)
        };
        let trace = solve_coupled_csc(&p, 3000, None).unwrap();
        let last = trace.last();
        let prev = &trace.iterates[trace.iterates.len() - 2];
        let step = last.max_abs_diff(prev).unwrap();
        assert!(step <= 1e-8, "{step}");
        let again = coupled_iteration(&p, last, trace.lipschitz).unwrap();
        assert!(again.max_abs_diff(last).unwrap() <= 1e-8);
    }

    #[test]
    fn respects_initial_codes_and_fixed_l() {
        let mut p = random_problem(5, 2, 5, 5);
        p.lipschitz = Some(50.0);
        let u0 = Tensor::filled(2, 5, 5, 0.25);
        let trace = solve_coupled_csc(&p, 3, Some(&u0)).unwrap();
        assert_eq!(trace.lipschitz, 50.0);
        assert_eq!(trace.iterates[0], u0);
        let one = coupled_iteration(&p, &u0, 50.0).unwrap();
        assert_eq!(trace.iterates[1], one);
        assert!(solve_coupled_csc(&p, 3, Some(&Tensor::zeros(1, 5, 5))).is_err());
        assert!(solve_coupled_csc(&p, 0, None).is_err());
    }

    #[test]
    fn ista_is_the_zero_side_information_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = KernelBank::from_fn(1, 3, 3, 3, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let omega = Tensor::from_fn(1, 7, 6, |_, _, _| rng.random_range(-1.0..1.0));
        let lambda = 0.08;
        let mut ista = Vec::new();
        solve_csc_ista_with(&omega, &d, lambda, 40, |_, z| ista.push(z.clone())).unwrap();
        let coupled = CSCProblem::unguided(omega.clone(), d.clone(), lambda / 2.0).unwrap();
        let trace = solve_coupled_csc(&coupled, 40, None).unwrap();
        assert_eq!(ista.len(), trace.iterates.len());
        for (a, b) in ista.iter().zip(&trace.iterates) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ista_of_zero_image_is_zero() {
        let d = KernelBank::from_fn(1, 2, 3, 3, |_, c, a, b| (c + a + b) as f64 * 0.1 + 0.1).unwrap();
        let z = solve_csc_ista(&Tensor::zeros(1, 6, 6), &d, 0.1, 10).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn ista_recovers_support() {
        let data = generate_synthetic_coupled::<f64>(&SyntheticConfig {
            k: 2,
            height: 24,
            width: 24,
            density: 0.03,
            overlap: 1.0,
            atom_size: 5,
            seed: 21,
        })
        .unwrap();
        let z = solve_csc_ista(&data.omega, &data.b, 1e-3, 500).unwrap();
        let truth: Vec<usize> = (0..z.len()).filter(|&i| data.z_star.as_slice()[i] != 0.0).collect();
        assert!(!truth.is_empty());
        let hit = truth.iter().filter(|&&i| z.as_slice()[i] != 0.0).count();
        assert!(hit * 10 >= truth.len() * 9, "{hit}/{}", truth.len());
    }

    #[test]
    fn side_information_lowers_code_error() {
        let mut wins = 0;
        for seed in 0..5 {
            let data = generate_synthetic_coupled::<f64>(&SyntheticConfig {
                k: 4,
                height: 24,
                width: 24,
                density: 0.05,
                overlap: 0.9,
                atom_size: 5,
                seed,
            })
            .unwrap();
            let lambda = 0.02;
            let guided = CSCProblem::new(data.y.clone(), data.d.clone(), data.z_star.clone(), lambda, None).unwrap();
            let plain = CSCProblem::unguided(data.y.clone(), data.d.clone(), lambda).unwrap();
            let eg = solve_coupled_csc(&guided, 200, None).unwrap().last().sub(&data.u_star).unwrap().norm_l2();
            let ep = solve_coupled_csc(&plain, 200, None).unwrap().last().sub(&data.u_star).unwrap().norm_l2();
            if eg < ep {
                wins += 1;
            }
        }
        assert_eq!(wins, 5);
    }
}
