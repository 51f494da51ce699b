//! PSNR, SSIM and per-image evaluation tables.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dataset::ImagePair;
use crate::error::{domain_err, shape_err, Result};
use crate::image::bicubic_resize;
use crate::{Real, Tensor};

fn mse_f64<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.ensure_same_shape(b, "metric")?;
    if a.is_empty() {
        return Err(shape_err!("metric of an empty image"));
    }
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / MSE)` in dB; `+∞` for identical images.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(domain_err!("peak must be positive, got {peak}"));
    }
    let mse = mse_f64(a, b)?;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(peak * peak / mse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    /// Odd window side length.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

impl SsimConfig {
    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(domain_err!("SSIM window must be odd, got {}", self.window));
        }
        if !(self.sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.peak > 0.0) {
            return Err(domain_err!("SSIM sigma, K1, K2 and peak must be positive"));
        }
        Ok(())
    }

    /// Separable normalized Gaussian weights (1-D factor).
    pub fn window_1d(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let mut w: Vec<f64> = (-r..=r)
            .map(|x| libm::exp(-((x * x) as f64) / (2.0 * self.sigma * self.sigma)))
            .collect();
        let s: f64 = w.iter().sum();
        for v in &mut w {
            *v /= s;
        }
        w
    }
}

/// Windowed sums over valid positions: horizontal then vertical pass.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = alloc::vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            tmp[i * ow + j] = (0..n).map(|m| g[m] * x[i * w + j + m]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|m| g[m] * tmp[(i + m) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid window positions of two single-channel images.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    a.ensure_same_shape(b, "ssim")?;
    if a.channels() != 1 {
        return Err(shape_err!("ssim needs single-channel images, got {:?}", a.shape()));
    }
    let (h, w) = a.spatial();
    if h < cfg.window || w < cfg.window {
        return Err(domain_err!("{h}×{w} image is smaller than the {0}×{0} SSIM window", cfg.window));
    }
    let g = cfg.window_1d();
    let av: Vec<f64> = a.as_slice().iter().map(|v| v.as_f64()).collect();
    let bv: Vec<f64> = b.as_slice().iter().map(|v| v.as_f64()).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter_valid(&av, h, w, &g);
    let mu_b = filter_valid(&bv, h, w, &g);
    let e_aa = filter_valid(&prod(&av, &av), h, w, &g);
    let e_bb = filter_valid(&prod(&bv, &bv), h, w, &g);
    let e_ab = filter_valid(&prod(&av, &bv), h, w, &g);
    let c1 = (cfg.k1 * cfg.peak) * (cfg.k1 * cfg.peak);
    let c2 = (cfg.k2 * cfg.peak) * (cfg.k2 * cfg.peak);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Something that maps `(degraded target, guidance)` to a super-resolved target.
pub trait SrMethod<T> {
    fn name(&self) -> &str;
    fn super_resolve(&self, lr_up: &Tensor<T>, guidance: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Returns the pre-upsampled input unchanged, which is the bicubic baseline
/// because inputs are already bicubically upsampled.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bicubic;

impl<T: Real> SrMethod<T> for Bicubic {
    fn name(&self) -> &str {
        "bicubic"
    }
    fn super_resolve(&self, lr_up: &Tensor<T>, _guidance: &Tensor<T>) -> Result<Tensor<T>> {
        bicubic_resize(lr_up, lr_up.height(), lr_up.width())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub image: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub average: MetricsRow,
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsTable {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(domain_err!("no images to evaluate"));
        }
        let n = rows.len() as f64;
        let average = MetricsRow {
            image: "average".to_string(),
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        };
        Ok(Self { rows, average })
    }

    /// `image,psnr_db,ssim` with a final `average` row; infinite PSNR prints
    /// as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_db,ssim\n");
        for r in self.rows.iter().chain(core::iter::once(&self.average)) {
            out.push_str(&format!("{},{},{}\n", r.image, fmt_value(r.psnr_db), fmt_value(r.ssim)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub peak: f64,
    /// Pixels removed from every side before measuring.
    pub border: usize,
    pub ssim: SsimConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            peak: 1.0,
            border: 0,
            ssim: SsimConfig::default(),
        }
    }
}

fn shave<T: Real>(t: &Tensor<T>, border: usize) -> Result<Tensor<T>> {
    if border == 0 {
        return Ok(t.clone());
    }
    let (h, w) = t.spatial();
    if 2 * border >= h || 2 * border >= w {
        return Err(domain_err!("border {border} removes the whole {h}×{w} image"));
    }
    t.crop(border, border, h - 2 * border, w - 2 * border)
}

/// Per-image PSNR/SSIM of `method` against each pair's high-resolution target.
pub fn evaluate_pairs<T: Real, M: SrMethod<T> + ?Sized>(
    method: &M,
    pairs: &[(String, ImagePair<T>)],
    opts: &EvalOptions,
) -> Result<MetricsTable> {
    if pairs.is_empty() {
        return Err(domain_err!("no images to evaluate"));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (name, pair) in pairs {
        let sr = method.super_resolve(&pair.target_lr_up, &pair.guidance)?;
        let sr = shave(&sr, opts.border)?;
        let gt = shave(&pair.target_hr, opts.border)?;
        rows.push(MetricsRow {
            image: name.clone(),
            psnr_db: psnr(&sr, &gt, opts.peak)?,
            ssim: ssim(&sr, &gt, &opts.ssim)?,
        });
    }
    MetricsTable::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(1, h, w, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_examples() {
        let a = random(4, 4, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let z = Tensor::<f64>::zeros(1, 2, 2);
        let b = Tensor::filled(1, 2, 2, 0.1);
        assert!((psnr(&z, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        let c = Tensor::filled(1, 2, 2, 1.0);
        assert!((psnr(&z, &c, 255.0).unwrap() - 48.1308).abs() < 1e-4);
        assert!(psnr(&z, &Tensor::zeros(1, 2, 3), 1.0).is_err());
        assert!(psnr(&z, &c, 0.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p = psnr_from_mse(k as f64 * 1e-3, 1.0);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_transpose() {
        let cfg = SsimConfig::default();
        let a = random(16, 13, 2);
        let b = random(16, 13, 3);
        assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
        let ab = ssim(&a, &b, &cfg).unwrap();
        assert_eq!(ab, ssim(&b, &a, &cfg).unwrap());
        assert!((-1.0..1.0).contains(&ab));
        let t = ssim(&a.transpose_spatial(), &b.transpose_spatial(), &cfg).unwrap();
        assert!((t - ab).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let cfg = SsimConfig::default();
        let c1 = 0.01f64 * 0.01;
        let got = ssim(&Tensor::<f64>::zeros(1, 12, 12), &Tensor::filled(1, 12, 12, 1.0), &cfg).unwrap();
        assert!((got - c1 / (1.0 + c1)).abs() < 1e-9, "{got}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random(10, 20, 1);
        assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
    }

    #[test]
    fn window_sums_to_one() {
        let w = SsimConfig::default().window_1d();
        assert_eq!(w.len(), 11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    struct Identity;
    impl SrMethod<f64> for Identity {
        fn name(&self) -> &str {
            "identity"
        }
        fn super_resolve(&self, _lr: &Tensor<f64>, g: &Tensor<f64>) -> Result<Tensor<f64>> {
            Ok(g.clone())
        }
    }

    #[test]
    fn table_average_and_csv() {
        let hr = random(16, 16, 5);
        let pair = ImagePair::new(hr.clone(), hr.clone(), hr.map(|v| v * 0.9), 2).unwrap();
        let table = evaluate_pairs(&Identity, &[("x".into(), pair.clone())], &EvalOptions::default()).unwrap();
        assert_eq!(table.average.psnr_db, f64::INFINITY);
        assert_eq!(table.to_csv(), "image,psnr_db,ssim\nx,inf,1.000000\naverage,inf,1.000000\n");

        let p2 = ImagePair::from_hr(random(16, 16, 6), random(16, 16, 7), 2).unwrap();
        let pairs = vec![("a".into(), pair), ("b".into(), p2.clone())];
        let t = evaluate_pairs(&Bicubic, &pairs, &EvalOptions::default()).unwrap();
        let mean = (t.rows[0].ssim + t.rows[1].ssim) / 2.0;
        assert!((t.average.ssim - mean).abs() <= 1e-12);
        assert_eq!(t.rows[1].psnr_db, psnr(&p2.target_lr_up, &p2.target_hr, 1.0).unwrap());
        assert_eq!(t.rows[1].ssim, ssim(&p2.target_lr_up, &p2.target_hr, &SsimConfig::default()).unwrap());
        assert!(evaluate_pairs::<f64, _>(&Bicubic, &[], &EvalOptions::default()).is_err());
    }

    #[test]
    fn border_crop() {
        let p = ImagePair::from_hr(random(24, 24, 8), random(24, 24, 9), 2).unwrap();
        let opts = EvalOptions {
            border: 2,
            ..EvalOptions::default()
        };
        let t = evaluate_pairs(&Bicubic, &[("p".into(), p.clone())], &opts).unwrap();
        let crop = |x: &Tensor<f64>| x.crop(2, 2, 20, 20).unwrap();
        assert_eq!(t.rows[0].psnr_db, psnr(&crop(&p.target_lr_up), &crop(&p.target_hr), 1.0).unwrap());
    }
}
