//! The unfolded multimodal network.
//!
//! Three branches share the spatial size of the input throughout:
//!
//! * a convolutional LISTA encoder turning the guidance image `Ω` into
//!   sparse maps `Z` (`Z ← S_γ(Z − Qg*(Rg*Z) + Pg*Ω)`),
//! * the LMCSC encoder computing target maps with `Z` as side information
//!   (`U ← ξ_μ(U − Q*(R*U) + P*Y; Z)`),
//! * a convolutional-dictionary decoder `Ŷ = Σ_i D_i * U_i`.
//!
//! Both encoders start from all-zero maps.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adam::ParamSet;
use crate::conv::{conv2d_same, dict_synthesize};
use crate::error::{shape_err, Result};
use crate::prox::{shrink, xi};
use crate::{Error, FeatureMaps, KernelBank, Real, Tensor};

/// Architecture and initialisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Number of atoms / feature maps.
    pub k: usize,
    /// Odd side length of every kernel.
    pub kernel_size: usize,
    pub stages_lmcsc: usize,
    pub stages_guidance: usize,
    /// Share one set of stage parameters across all stages of a branch.
    pub tied_weights: bool,
    /// Standard deviation of the Gaussian kernel initialisation.
    pub init_std: f64,
    /// Initial value of every `μ` and `γ`.
    pub init_threshold: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            k: 85,
            kernel_size: 5,
            stages_lmcsc: 3,
            stages_guidance: 3,
            tied_weights: false,
            init_std: 0.01,
            init_threshold: 0.2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key, reason: &str| {
            Err(Error::Config {
                key,
                reason: reason.into(),
            })
        };
        if self.k == 0 {
            return bad("k", "must be at least 1");
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return bad("kernel_size", "must be odd (symmetric same-padding)");
        }
        if self.stages_lmcsc == 0 {
            return bad("stages_lmcsc", "must be at least 1");
        }
        if self.stages_guidance == 0 {
            return bad("stages_guidance", "must be at least 1");
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return bad("init_std", "must be finite and nonnegative");
        }
        if !(self.init_threshold >= 0.0) || !self.init_threshold.is_finite() {
            return bad("init_threshold", "must be finite and nonnegative");
        }
        Ok(())
    }
}

/// One LMCSC stage: `U ← ξ_μ(U − Q*(R*U) + P*Y; Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T> {
    /// `1 → k`
    pub q: KernelBank<T>,
    /// `k → 1`
    pub r: KernelBank<T>,
    /// `1 → k`
    pub p: KernelBank<T>,
    pub mu: T,
}

/// One guidance LISTA stage: `Z ← S_γ(Z − Qg*(Rg*Z) + Pg*Ω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceStageParams<T> {
    pub q: KernelBank<T>,
    pub r: KernelBank<T>,
    pub p: KernelBank<T>,
    pub gamma: T,
}

fn check_stage_banks<T: Real>(
    q: &KernelBank<T>,
    r: &KernelBank<T>,
    p: &KernelBank<T>,
    k: usize,
    size: usize,
) -> Result<()> {
    let lift = (k, 1, size, size);
    let squash = (1, k, size, size);
    if q.shape() != lift || p.shape() != lift || r.shape() != squash {
        return Err(shape_err!(
            "stage banks Q {:?}, R {:?}, P {:?} do not match k = {k}, kernel {size}",
            q.shape(),
            r.shape(),
            p.shape()
        ));
    }
    Ok(())
}

impl<T: Real> StageParams<T> {
    pub fn num_atoms(&self) -> usize {
        self.q.out_channels()
    }

    fn check(&self, k: usize, size: usize) -> Result<()> {
        check_stage_banks(&self.q, &self.r, &self.p, k, size)
    }
}

impl<T: Real> GuidanceStageParams<T> {
    fn check(&self, k: usize, size: usize) -> Result<()> {
        check_stage_banks(&self.q, &self.r, &self.p, k, size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    /// One entry per stage, or a single shared entry when `tied`.
    pub lmcsc: Vec<StageParams<T>>,
    pub guidance: Vec<GuidanceStageParams<T>>,
    /// `k → 1` synthesis dictionary.
    pub decoder: KernelBank<T>,
    pub lmcsc_depth: usize,
    pub guidance_depth: usize,
    pub tied: bool,
}

impl<T: Real> NetworkParams<T> {
    pub fn num_atoms(&self) -> usize {
        self.decoder.in_channels()
    }

    pub fn kernel_size(&self) -> usize {
        self.decoder.kernel_size().0
    }

    #[inline]
    pub fn lmcsc_stage(&self, t: usize) -> &StageParams<T> {
        &self.lmcsc[if self.tied { 0 } else { t }]
    }

    #[inline]
    pub fn lmcsc_stage_mut(&mut self, t: usize) -> &mut StageParams<T> {
        let i = if self.tied { 0 } else { t };
        &mut self.lmcsc[i]
    }

    #[inline]
    pub fn guidance_stage(&self, t: usize) -> &GuidanceStageParams<T> {
        &self.guidance[if self.tied { 0 } else { t }]
    }

    #[inline]
    pub fn guidance_stage_mut(&mut self, t: usize) -> &mut GuidanceStageParams<T> {
        let i = if self.tied { 0 } else { t };
        &mut self.guidance[i]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_atoms();
        let (kh, kw) = self.decoder.kernel_size();
        if self.decoder.out_channels() != 1 || kh != kw {
            return Err(shape_err!("decoder {:?} is not a square k→1 bank", self.decoder.shape()));
        }
        if self.lmcsc_depth == 0 || self.guidance_depth == 0 {
            return Err(shape_err!("stage counts must be at least 1"));
        }
        let (nu, ng) = if self.tied {
            (1, 1)
        } else {
            (self.lmcsc_depth, self.guidance_depth)
        };
        if self.lmcsc.len() != nu || self.guidance.len() != ng {
            return Err(shape_err!(
                "expected {nu} + {ng} stage parameter sets, found {} + {}",
                self.lmcsc.len(),
                self.guidance.len()
            ));
        }
        for s in &self.lmcsc {
            s.check(k, kh)?;
            if !(s.mu >= T::zero()) {
                return Err(Error::Domain(format!("stage threshold mu = {} is negative", s.mu)));
            }
        }
        for s in &self.guidance {
            s.check(k, kh)?;
            if !(s.gamma >= T::zero()) {
                return Err(Error::Domain(format!(
                    "guidance threshold gamma = {} is negative",
                    s.gamma
                )));
            }
        }
        Ok(())
    }

    /// Clamp every `μ` and `γ` to be nonnegative.
    pub fn project_thresholds(&mut self) {
        for s in &mut self.lmcsc {
            s.mu = s.mu.max(T::zero());
        }
        for s in &mut self.guidance {
            s.gamma = s.gamma.max(T::zero());
        }
    }

    /// Parameter tensors with stable names, in the canonical order used by
    /// [`ParamSet`] and the checkpoint format.
    pub fn named_params(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, s) in self.guidance.iter().enumerate() {
            out.push((format!("guidance.{i}.q"), s.q.as_slice()));
            out.push((format!("guidance.{i}.r"), s.r.as_slice()));
            out.push((format!("guidance.{i}.p"), s.p.as_slice()));
            out.push((format!("guidance.{i}.gamma"), core::slice::from_ref(&s.gamma)));
        }
        for (i, s) in self.lmcsc.iter().enumerate() {
            out.push((format!("lmcsc.{i}.q"), s.q.as_slice()));
            out.push((format!("lmcsc.{i}.r"), s.r.as_slice()));
            out.push((format!("lmcsc.{i}.p"), s.p.as_slice()));
            out.push((format!("lmcsc.{i}.mu"), core::slice::from_ref(&s.mu)));
        }
        out.push((String::from("decoder"), self.decoder.as_slice()));
        out
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            lmcsc: self
                .lmcsc
                .iter()
                .map(|s| StageParams {
                    q: s.q.cast(),
                    r: s.r.cast(),
                    p: s.p.cast(),
                    mu: U::of_f64(s.mu.as_f64()),
                })
                .collect(),
            guidance: self
                .guidance
                .iter()
                .map(|s| GuidanceStageParams {
                    q: s.q.cast(),
                    r: s.r.cast(),
                    p: s.p.cast(),
                    gamma: U::of_f64(s.gamma.as_f64()),
                })
                .collect(),
            decoder: self.decoder.cast(),
            lmcsc_depth: self.lmcsc_depth,
            guidance_depth: self.guidance_depth,
            tied: self.tied,
        }
    }
}

impl<T: Real> ParamSet<T> for NetworkParams<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        self.named_params().into_iter().map(|(_, s)| s).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for s in &mut self.guidance {
            out.push(s.q.as_mut_slice());
            out.push(s.r.as_mut_slice());
            out.push(s.p.as_mut_slice());
            out.push(core::slice::from_mut(&mut s.gamma));
        }
        for s in &mut self.lmcsc {
            out.push(s.q.as_mut_slice());
            out.push(s.r.as_mut_slice());
            out.push(s.p.as_mut_slice());
            out.push(core::slice::from_mut(&mut s.mu));
        }
        out.push(self.decoder.as_mut_slice());
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.param_slices_mut() {
            s.fill(T::zero());
        }
        z
    }
}

/// Gaussian `N(0, init_std²)` kernels and constant thresholds, drawn from a
/// seeded ChaCha stream in canonical parameter order.
pub fn init_params<T: Real>(cfg: &NetConfig, seed: u64) -> Result<NetworkParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config {
        key: "init_std",
        reason: format!("{e}"),
    })?;
    let (k, p) = (cfg.k, cfg.kernel_size);
    let mut bank = |o: usize, i: usize| {
        KernelBank::from_fn(o, i, p, p, |_, _, _, _| T::of_f64(normal.sample(&mut rng)))
    };
    let (nu, ng) = if cfg.tied_weights {
        (1, 1)
    } else {
        (cfg.stages_lmcsc, cfg.stages_guidance)
    };
    let threshold = T::of_f64(cfg.init_threshold);
    let mut guidance = Vec::with_capacity(ng);
    for _ in 0..ng {
        guidance.push(GuidanceStageParams {
            q: bank(k, 1)?,
            r: bank(1, k)?,
            p: bank(k, 1)?,
            gamma: threshold,
        });
    }
    let mut lmcsc = Vec::with_capacity(nu);
    for _ in 0..nu {
        lmcsc.push(StageParams {
            q: bank(k, 1)?,
            r: bank(1, k)?,
            p: bank(k, 1)?,
            mu: threshold,
        });
    }
    let decoder = bank(1, k)?;
    Ok(NetworkParams {
        lmcsc,
        guidance,
        decoder,
        lmcsc_depth: cfg.stages_lmcsc,
        guidance_depth: cfg.stages_guidance,
        tied: cfg.tied_weights,
    })
}

/// Pre-activation of a stage: `X − Q*(R*X) + P*I`, with the intermediate
/// `R*X`. `x = None` stands for all-zero maps.
fn stage_linear<T: Real>(
    x: Option<&FeatureMaps<T>>,
    input: &Tensor<T>,
    q: &KernelBank<T>,
    r: &KernelBank<T>,
    p: &KernelBank<T>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let mut pre = conv2d_same(input, p)?;
    let Some(x) = x else {
        return Ok((pre, None));
    };
    pre.ensure_same_shape(x, "stage input")?;
    let rx = conv2d_same(x, r)?;
    let qrx = conv2d_same(&rx, q)?;
    for ((o, &a), &b) in pre.as_mut_slice().iter_mut().zip(x.as_slice()).zip(qrx.as_slice()) {
        *o = (a - b) + *o;
    }
    Ok((pre, Some(rx)))
}

fn check_single_channel<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.channels() != 1 {
        return Err(shape_err!("{what} must be single-channel, got {:?}", t.shape()));
    }
    Ok(())
}

/// One LISTA stage of the guidance encoder.
pub fn lista_stage_forward<T: Real>(
    z: &FeatureMaps<T>,
    omega: &Tensor<T>,
    gp: &GuidanceStageParams<T>,
) -> Result<FeatureMaps<T>> {
    check_single_channel(omega, "guidance image")?;
    let (pre, _) = stage_linear(Some(z), omega, &gp.q, &gp.r, &gp.p)?;
    crate::prox::soft_threshold_map(&pre, gp.gamma)
}

/// One LMCSC stage with side information `z`.
pub fn lmcsc_stage_forward<T: Real>(
    u: &FeatureMaps<T>,
    y: &Tensor<T>,
    z: &FeatureMaps<T>,
    sp: &StageParams<T>,
) -> Result<FeatureMaps<T>> {
    check_single_channel(y, "target image")?;
    u.ensure_same_shape(z, "side information")?;
    let (pre, _) = stage_linear(Some(u), y, &sp.q, &sp.r, &sp.p)?;
    crate::prox::prox_l1l1_map(&pre, z, crate::prox::ProxParams::new(sp.mu)?)
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// Pre-upsampled low-resolution target.
    pub y: Tensor<T>,
    pub omega: Tensor<T>,
    /// `Z^0 = 0, …, Z^{T_g}`.
    pub z_iterates: Vec<FeatureMaps<T>>,
    /// Pre-shrinkage values of each guidance stage.
    pub z_pre: Vec<FeatureMaps<T>>,
    /// `Rg * Z^t` for `t ≥ 1` (index `t`; entry 0 unused and empty).
    pub z_reduced: Vec<Option<Tensor<T>>>,
    /// `U^0 = 0, …, U^{T_u}`.
    pub u_iterates: Vec<FeatureMaps<T>>,
    pub u_pre: Vec<FeatureMaps<T>>,
    pub u_reduced: Vec<Option<Tensor<T>>>,
    pub yhat: Tensor<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Guidance codes fed to every LMCSC stage.
    pub fn side_information(&self) -> &FeatureMaps<T> {
        self.z_iterates.last().expect("at least Z^0")
    }

    pub fn codes(&self) -> &FeatureMaps<T> {
        self.u_iterates.last().expect("at least U^0")
    }
}

struct BranchRun<T> {
    iterates: Vec<FeatureMaps<T>>,
    pre: Vec<FeatureMaps<T>>,
    reduced: Vec<Option<Tensor<T>>>,
}

fn run_guidance<T: Real>(omega: &Tensor<T>, params: &NetworkParams<T>) -> Result<BranchRun<T>> {
    let k = params.num_atoms();
    let (h, w) = omega.spatial();
    let mut run = BranchRun {
        iterates: Vec::with_capacity(params.guidance_depth + 1),
        pre: Vec::with_capacity(params.guidance_depth),
        reduced: Vec::with_capacity(params.guidance_depth),
    };
    run.iterates.push(Tensor::zeros(k, h, w));
    for t in 0..params.guidance_depth {
        let gp = params.guidance_stage(t);
        let prev = (t > 0).then(|| &run.iterates[t]);
        let (pre, reduced) = stage_linear(prev, omega, &gp.q, &gp.r, &gp.p)?;
        let next = pre.map(|v| shrink(v, gp.gamma));
        run.pre.push(pre);
        run.reduced.push(reduced);
        run.iterates.push(next);
    }
    Ok(run)
}

fn run_lmcsc<'a, T: Real>(
    y: &Tensor<T>,
    side: &FeatureMaps<T>,
    stages: impl Fn(usize) -> &'a StageParams<T>,
    depth: usize,
) -> Result<BranchRun<T>> {
    let (k, h, w) = side.shape();
    let mut run = BranchRun {
        iterates: Vec::with_capacity(depth + 1),
        pre: Vec::with_capacity(depth),
        reduced: Vec::with_capacity(depth),
    };
    run.iterates.push(Tensor::zeros(k, h, w));
    for t in 0..depth {
        let sp = stages(t);
        let prev = (t > 0).then(|| &run.iterates[t]);
        let (pre, reduced) = stage_linear(prev, y, &sp.q, &sp.r, &sp.p)?;
        let mu = sp.mu;
        let mut next = pre.clone();
        for (o, &s) in next.as_mut_slice().iter_mut().zip(side.as_slice()) {
            *o = xi(*o, s, mu);
        }
        run.pre.push(pre);
        run.reduced.push(reduced);
        run.iterates.push(next);
    }
    Ok(run)
}

/// Full forward pass on a pre-upsampled target `ylr` and guidance `omega`.
pub fn network_forward<T: Real>(
    ylr: &Tensor<T>,
    omega: &Tensor<T>,
    params: &NetworkParams<T>,
) -> Result<ForwardTrace<T>> {
    params.validate()?;
    check_single_channel(ylr, "target image")?;
    check_single_channel(omega, "guidance image")?;
    if ylr.spatial() != omega.spatial() {
        return Err(shape_err!(
            "target {:?} and guidance {:?} differ in size",
            ylr.spatial(),
            omega.spatial()
        ));
    }
    let g = run_guidance(omega, params)?;
    let side = g.iterates.last().expect("Z^0");
    let u = run_lmcsc(ylr, side, |t| params.lmcsc_stage(t), params.lmcsc_depth)?;
    let yhat = dict_synthesize(u.iterates.last().expect("U^0"), &params.decoder)?;
    Ok(ForwardTrace {
        y: ylr.clone(),
        omega: omega.clone(),
        z_iterates: g.iterates,
        z_pre: g.pre,
        z_reduced: g.reduced,
        u_iterates: u.iterates,
        u_pre: u.pre,
        u_reduced: u.reduced,
        yhat,
    })
}

/// Super-resolved image only.
pub fn predict<T: Real>(ylr: &Tensor<T>, omega: &Tensor<T>, params: &NetworkParams<T>) -> Result<Tensor<T>> {
    Ok(network_forward(ylr, omega, params)?.yhat)
}

/// LMCSC encoder and decoder obtained by unfolding the iterative solver;
/// the guidance branch is bypassed and `Z` is supplied directly.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedSolver<T> {
    pub stages: Vec<StageParams<T>>,
    pub decoder: KernelBank<T>,
}

/// Every stage gets `R = D`, `Q = P = D̃/L` and `μ = λ/L`; the decoder is `D`.
pub fn params_from_solver<T: Real>(
    dict: &KernelBank<T>,
    lambda: T,
    lipschitz: T,
    depth: usize,
) -> Result<UnfoldedSolver<T>> {
    let (oc, _, kh, kw) = dict.shape();
    if oc != 1 || kh != kw {
        return Err(shape_err!("dictionary {:?} is not a square k→1 bank", dict.shape()));
    }
    if !(lipschitz > T::zero()) {
        return Err(Error::Domain(format!("L must be positive, got {lipschitz}")));
    }
    if depth == 0 {
        return Err(shape_err!("depth must be at least 1"));
    }
    let inv_l = T::one() / lipschitz;
    let analysis = dict.adjoint().scale(inv_l);
    let stage = StageParams {
        q: analysis.clone(),
        r: dict.clone(),
        p: analysis,
        mu: lambda / lipschitz,
    };
    Ok(UnfoldedSolver {
        stages: alloc::vec![stage; depth],
        decoder: dict.clone(),
    })
}

impl<T: Real> UnfoldedSolver<T> {
    /// `U^0 = 0, …, U^T` for target `y` and side information `z`.
    pub fn encode(&self, y: &Tensor<T>, z: &FeatureMaps<T>) -> Result<Vec<FeatureMaps<T>>> {
        check_single_channel(y, "target image")?;
        let k = self.decoder.in_channels();
        if z.shape() != (k, y.height(), y.width()) {
            return Err(shape_err!("side information {:?} does not match target", z.shape()));
        }
        Ok(run_lmcsc(y, z, |t| &self.stages[t], self.stages.len())?.iterates)
    }

    pub fn reconstruct(&self, y: &Tensor<T>, z: &FeatureMaps<T>) -> Result<Tensor<T>> {
        let codes = self.encode(y, z)?;
        dict_synthesize(codes.last().expect("U^0"), &self.decoder)
    }
}
