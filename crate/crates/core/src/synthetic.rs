//! Synthetic coupled sparse-coding data with known ground truth.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conv::dict_synthesize;
use crate::error::{domain_err, Result};
use crate::{FeatureMaps, KernelBank, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub k: usize,
    pub height: usize,
    pub width: usize,
    /// Probability that a guidance code entry is nonzero, in `(0, 1)`.
    pub density: f64,
    /// Fraction of the guidance support shared by the target codes, in `[0, 1]`.
    pub overlap: f64,
    /// Odd atom side length.
    pub atom_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCoupled<T> {
    /// `D * U*`
    pub y: Tensor<T>,
    /// `B * Z*`
    pub omega: Tensor<T>,
    pub u_star: FeatureMaps<T>,
    pub z_star: FeatureMaps<T>,
    pub d: KernelBank<T>,
    pub b: KernelBank<T>,
}

/// `k → 1` dictionary of Gaussian atoms scaled to unit Frobenius norm.
pub fn random_unit_dictionary<T: Real>(
    rng: &mut impl Rng,
    k: usize,
    size: usize,
) -> Result<KernelBank<T>> {
    let mut bank = KernelBank::<T>::zeros(1, k, size, size)?;
    let n = size * size;
    for (i, atom) in bank.as_mut_slice().chunks_mut(n).enumerate() {
        let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return Err(domain_err!("atom {i} drew an all-zero kernel"));
        }
        for (w, v) in atom.iter_mut().zip(&raw) {
            *w = T::of_f64(v / norm);
        }
    }
    Ok(bank)
}

/// Draw dictionaries `D`, `B`, guidance codes `Z*` with the given density
/// and target codes `U*` that copy an `overlap` fraction of `Z*`'s support
/// (values included); the remaining target support is placed off `Z*`'s
/// support with fresh values so both code maps have equal support size.
pub fn generate_synthetic_coupled<T: Real>(cfg: &SyntheticConfig) -> Result<SyntheticCoupled<T>> {
    if cfg.k == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(domain_err!("synthetic data needs k, height, width ≥ 1"));
    }
    if !(cfg.density > 0.0 && cfg.density < 1.0) {
        return Err(domain_err!("density must lie in (0, 1), got {}", cfg.density));
    }
    if !(0.0..=1.0).contains(&cfg.overlap) {
        return Err(domain_err!("overlap must lie in [0, 1], got {}", cfg.overlap));
    }
    if cfg.atom_size.is_multiple_of(2) {
        return Err(domain_err!("atom size must be odd, got {}", cfg.atom_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = random_unit_dictionary::<T>(&mut rng, cfg.k, cfg.atom_size)?;
    let b = random_unit_dictionary::<T>(&mut rng, cfg.k, cfg.atom_size)?;

    let n = cfg.k * cfg.height * cfg.width;
    let mut z = alloc::vec![0.0f64; n];
    let mut support = Vec::new();
    for (idx, v) in z.iter_mut().enumerate() {
        if rng.random_bool(cfg.density) {
            *v = StandardNormal.sample(&mut rng);
            support.push(idx);
        }
    }

    let mut u = alloc::vec![0.0f64; n];
    let mut shared = support.clone();
    shared.shuffle(&mut rng);
    let n_shared = libm::round(cfg.overlap * support.len() as f64) as usize;
    for &idx in &shared[..n_shared] {
        u[idx] = z[idx];
    }
    let mut free: Vec<usize> = (0..n).filter(|&i| z[i] == 0.0).collect();
    free.shuffle(&mut rng);
    for &idx in free.iter().take(support.len() - n_shared) {
        u[idx] = StandardNormal.sample(&mut rng);
    }

    let to_t = |v: Vec<f64>| {
        Tensor::from_vec(
            cfg.k,
            cfg.height,
            cfg.width,
            v.into_iter().map(T::of_f64).collect(),
        )
    };
    let u_star = to_t(u)?;
    let z_star = to_t(z)?;
    let y = dict_synthesize(&u_star, &d)?;
    let omega = dict_synthesize(&z_star, &b)?;
    Ok(SyntheticCoupled {
        y,
        omega,
        u_star,
        z_star,
        d,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(density: f64, overlap: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            k: 3,
            height: 16,
            width: 12,
            density,
            overlap,
            atom_size: 5,
            seed,
        }
    }

    #[test]
    fn tiny_density_gives_empty_images() {
        let s = generate_synthetic_coupled::<f64>(&cfg(1e-12, 0.5, 1)).unwrap();
        assert_eq!(s.y.max_abs(), 0.0);
        assert_eq!(s.omega.max_abs(), 0.0);
    }

    #[test]
    fn full_overlap_copies_guidance_codes() {
        let s = generate_synthetic_coupled::<f64>(&cfg(0.1, 1.0, 2)).unwrap();
        let mut support = 0;
        for (&u, &z) in s.u_star.as_slice().iter().zip(s.z_star.as_slice()) {
            if z != 0.0 {
                support += 1;
                assert_eq!(u, z);
            }
        }
        assert!(support > 0);
    }

    #[test]
    fn partial_overlap_and_equal_support() {
        let s = generate_synthetic_coupled::<f64>(&cfg(0.1, 0.8, 3)).unwrap();
        let nz = |t: &Tensor<f64>| t.as_slice().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nz(&s.u_star), nz(&s.z_star));
        let shared = s
            .u_star
            .as_slice()
            .iter()
            .zip(s.z_star.as_slice())
            .filter(|(u, z)| **z != 0.0 && u == z)
            .count();
        let expect = libm::round(0.8 * nz(&s.z_star) as f64) as usize;
        assert_eq!(shared, expect);
    }

    #[test]
    fn atoms_have_unit_norm() {
        let s = generate_synthetic_coupled::<f64>(&cfg(0.1, 0.5, 4)).unwrap();
        for bank in [&s.d, &s.b] {
            for c in 0..3 {
                let n: f64 = bank.kernel(0, c).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic_coupled::<f64>(&cfg(0.1, 0.5, 9)).unwrap();
        let b = generate_synthetic_coupled::<f64>(&cfg(0.1, 0.5, 9)).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.u_star, b.u_star);
        assert_eq!(a.d, b.d);
        let c = generate_synthetic_coupled::<f64>(&cfg(0.1, 0.5, 10)).unwrap();
        assert_ne!(a.z_star, c.z_star);
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(generate_synthetic_coupled::<f64>(&cfg(0.0, 0.5, 1)).is_err());
        assert!(generate_synthetic_coupled::<f64>(&cfg(1.0, 0.5, 1)).is_err());
        assert!(generate_synthetic_coupled::<f64>(&cfg(0.5, 1.5, 1)).is_err());
        let mut c = cfg(0.1, 0.5, 1);
        c.atom_size = 4;
        assert!(generate_synthetic_coupled::<f64>(&c).is_err());
    }
}
