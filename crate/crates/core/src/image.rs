//! Colour conversion, resampling and the blur-downscale-upscale degradation.

use alloc::vec::Vec;

use crate::error::{domain_err, shape_err, Result};
use crate::{Real, Tensor};

const LUMA_R: f64 = 0.299;
const LUMA_B: f64 = 0.114;

/// BT.601 luma of a 3-channel image, evaluated as `G + 0.299(R−G) + 0.114(B−G)`
/// so that gray inputs map to themselves exactly.
pub fn rgb_to_luminance<T: Real>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    if rgb.channels() != 3 {
        return Err(shape_err!("luminance needs 3 channels, got {}", rgb.channels()));
    }
    let (r, g, b) = (rgb.channel(0), rgb.channel(1), rgb.channel(2));
    let (wr, wb) = (T::of_f64(LUMA_R), T::of_f64(LUMA_B));
    let data = (0..r.len())
        .map(|i| (g[i] + wr * (r[i] - g[i]) + wb * (b[i] - g[i])).max(T::zero()).min(T::one()))
        .collect();
    Tensor::from_vec(1, rgb.height(), rgb.width(), data)
}

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn keys_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Sparse 1-D resampling weights: for each output sample, `(first source
/// index, weights over consecutive clamped sources)`.
struct Taps {
    idx: Vec<[usize; 4]>,
    w: Vec<[f64; 4]>,
}

fn taps(n_in: usize, n_out: usize) -> Taps {
    let ratio = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    let mut idx = Vec::with_capacity(n_out);
    let mut w = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let src = (o as f64 + 0.5) * ratio - 0.5;
        let base = libm::floor(src) as isize - 1;
        let mut ii = [0usize; 4];
        let mut ww = [0.0; 4];
        for m in 0..4 {
            let pos = base + m as isize;
            ii[m] = pos.clamp(0, last) as usize;
            ww[m] = keys_kernel(src - pos as f64);
        }
        idx.push(ii);
        w.push(ww);
    }
    Taps { idx, w }
}

fn resize_unclamped<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(domain_err!("resize target {out_h}×{out_w} is empty"));
    }
    let (c, h, w) = img.shape();
    if h == 0 || w == 0 {
        return Err(domain_err!("cannot resize an empty image"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let mut out = Tensor::zeros(c, out_h, out_w);
    let mut rows = alloc::vec![0.0f64; h * out_w];
    for ch in 0..c {
        let src = img.channel(ch);
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for (j, (ii, ww)) in tx.idx.iter().zip(&tx.w).enumerate() {
                rows[i * out_w + j] = (0..4).map(|m| ww[m] * row[ii[m]].as_f64()).sum();
            }
        }
        let dst = out.channel_mut(ch);
        for (i, (ii, ww)) in ty.idx.iter().zip(&ty.w).enumerate() {
            for j in 0..out_w {
                let v: f64 = (0..4).map(|m| ww[m] * rows[ii[m] * out_w + j]).sum();
                dst[i * out_w + j] = T::of_f64(v);
            }
        }
    }
    Ok(out)
}

/// Separable bicubic resampling to `out_h × out_w`, half-pixel aligned,
/// edge-clamped, output clamped to `[0, 1]`.
pub fn bicubic_resize<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if (img.height(), img.width()) == (out_h, out_w) && out_h > 0 && out_w > 0 {
        return Ok(img.clone());
    }
    Ok(resize_unclamped(img, out_h, out_w)?.map(|v| v.max(T::zero()).min(T::one())))
}

/// Normalized 1-D Gaussian truncated at `ceil(4σ)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(domain_err!("blur sigma must be positive, got {sigma}"));
    }
    let radius = libm::ceil(4.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    Ok(k)
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur<T: Real>(img: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let k = gaussian_kernel_1d(sigma)?;
    let r = (k.len() / 2) as isize;
    let (c, h, w) = img.shape();
    let mut tmp = alloc::vec![0.0f64; h * w];
    let mut out = Tensor::zeros(c, h, w);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for ch in 0..c {
        let src = img.channel(ch);
        for i in 0..h {
            for j in 0..w {
                tmp[i * w + j] = k
                    .iter()
                    .enumerate()
                    .map(|(m, kv)| kv * src[i * w + clamp(j as isize + m as isize - r, w)].as_f64())
                    .sum();
            }
        }
        let dst = out.channel_mut(ch);
        for i in 0..h {
            for j in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(m, kv)| kv * tmp[clamp(i as isize + m as isize - r, h) * w + j])
                    .sum();
                dst[i * w + j] = T::of_f64(v);
            }
        }
    }
    Ok(out)
}

fn check_scale(h: usize, w: usize, scale: usize) -> Result<()> {
    if scale != 2 && scale != 4 {
        return Err(domain_err!("scale must be 2 or 4, got {scale}"));
    }
    if !h.is_multiple_of(scale) || !w.is_multiple_of(scale) {
        return Err(shape_err!("{h}×{w} image is not divisible by scale {scale}; crop it first"));
    }
    Ok(())
}

/// Gaussian blur (σ = scale/2), bicubic downscale by `scale`, bicubic
/// upscale back to the original size.
pub fn degrade<T: Real>(hr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let (h, w) = hr.spatial();
    check_scale(h, w, scale)?;
    let blurred = gaussian_blur(hr, scale as f64 / 2.0)?;
    let lr = bicubic_resize(&blurred, h / scale, w / scale)?;
    bicubic_resize(&lr, h, w)
}

/// [`degrade`] without clamping, so it is exactly linear. For signed data.
pub fn degrade_linear<T: Real>(hr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let (h, w) = hr.spatial();
    check_scale(h, w, scale)?;
    let blurred = gaussian_blur(hr, scale as f64 / 2.0)?;
    let lr = resize_unclamped(&blurred, h / scale, w / scale)?;
    resize_unclamped(&lr, h, w)
}

/// Largest top-left crop whose sides are multiples of `scale`.
pub fn crop_to_multiple<T: Real>(img: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    if scale == 0 {
        return Err(domain_err!("scale must be positive"));
    }
    let (h, w) = img.spatial();
    img.crop(0, 0, h - h % scale, w - w % scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn luminance_examples() {
        let px = |r, g, b| Tensor::from_vec(3, 1, 1, vec![r, g, b]).unwrap();
        assert_eq!(rgb_to_luminance(&px(1.0, 1.0, 1.0)).unwrap().as_slice(), &[1.0]);
        assert_eq!(rgb_to_luminance(&px(1.0, 0.0, 0.0)).unwrap().as_slice(), &[0.299]);
        assert_eq!(rgb_to_luminance(&px(0.0, 0.0, 0.0)).unwrap().as_slice(), &[0.0]);
        assert!(rgb_to_luminance(&Tensor::<f64>::zeros(1, 2, 2)).is_err());
    }

    #[test]
    fn keys_kernel_values() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        assert!((keys_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((keys_kernel(1.5) + 0.0625).abs() < 1e-15);
        // partition of unity at any phase
        for t in [0.0, 0.1, 0.37, 0.5, 0.99] {
            let s: f64 = (-1..=2).map(|m| keys_kernel(t - m as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_and_constant_resize() {
        let img = random(1, 7, 5, 1);
        assert_eq!(bicubic_resize(&img, 7, 5).unwrap(), img);
        let c = Tensor::filled(1, 6, 4, 0.3f64);
        for (h, w) in [(1, 1), (3, 2), (12, 8), (17, 9)] {
            let out = bicubic_resize(&c, h, w).unwrap();
            assert!(out.as_slice().iter().all(|v| (v - 0.3).abs() < 1e-14));
        }
        assert!(bicubic_resize(&img, 0, 3).is_err());
    }

    #[test]
    fn row_upsample_matches_kernel_formula() {
        let row = Tensor::from_rows(&[&[0.0, 1.0]]).unwrap();
        let out = bicubic_resize(&row, 1, 4).unwrap();
        for o in 0..4 {
            let src = (o as f64 + 0.5) * 0.5 - 0.5;
            let mut v = 0.0;
            for m in -2i32..4 {
                let sample = if m >= 1 { 1.0 } else { 0.0 };
                v += sample * keys_kernel(src - m as f64);
            }
            let want = v.clamp(0.0, 1.0);
            assert!((out.as_slice()[o] - want).abs() < 1e-15, "{o}: {} vs {want}", out.as_slice()[o]);
        }
        assert_eq!(out.as_slice()[0], 0.0);
        assert_eq!(out.as_slice()[3], 1.0);
        assert!((out.as_slice()[1] - 0.203125).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        for sigma in [1.0, 2.0] {
            let k = gaussian_kernel_1d(sigma).unwrap();
            assert_eq!(k.len(), 2 * (4.0 * sigma) as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(gaussian_kernel_1d(0.0).is_err());
    }

    #[test]
    fn degrade_preserves_constants_and_shape() {
        for scale in [2, 4] {
            let c = Tensor::filled(1, 16, 12, 0.6f64);
            let out = degrade(&c, scale).unwrap();
            assert_eq!(out.shape(), (1, 16, 12));
            assert!(out.as_slice().iter().all(|v| (v - 0.6).abs() < 1e-12));
        }
        let img = random(1, 10, 10, 2);
        assert!(degrade(&img, 4).is_err());
        assert!(degrade(&img, 3).is_err());
    }

    /// Dense reference: build the three 1-D operators as matrices by direct
    /// summation and apply them to an impulse.
    #[test]
    fn impulse_degradation_matches_direct_summation() {
        let (h, w, scale) = (12usize, 8usize, 2usize);
        let blur_matrix = |n: usize| {
            let sigma = scale as f64 / 2.0;
            let r = libm::ceil(4.0 * sigma) as isize;
            let norm: f64 = (-r..=r).map(|x| libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma))).sum();
            let mut m = vec![vec![0.0; n]; n];
            for (i, row) in m.iter_mut().enumerate() {
                for x in -r..=r {
                    let j = (i as isize + x).clamp(0, n as isize - 1) as usize;
                    row[j] += libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma)) / norm;
                }
            }
            m
        };
        let resize_matrix = |n_in: usize, n_out: usize| {
            let mut m = vec![vec![0.0; n_in]; n_out];
            for (o, row) in m.iter_mut().enumerate() {
                let src = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
                for p in -3isize..n_in as isize + 3 {
                    let j = p.clamp(0, n_in as isize - 1) as usize;
                    row[j] += keys_kernel(src - p as f64);
                }
            }
            m
        };
        let matmul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            let mut c = vec![vec![0.0; b[0].len()]; a.len()];
            for i in 0..a.len() {
                for k in 0..b.len() {
                    for j in 0..b[0].len() {
                        c[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            c
        };
        let op = |n: usize| {
            let down = matmul(&resize_matrix(n, n / scale), &blur_matrix(n));
            matmul(&resize_matrix(n / scale, n), &down)
        };
        let (ay, ax) = (op(h), op(w));
        let (pi, pj) = (5, 3);
        let mut img = Tensor::<f64>::zeros(1, h, w);
        img.set(0, pi, pj, 1.0);
        let got = degrade_linear(&img, scale).unwrap();
        for i in 0..h {
            for j in 0..w {
                let want = ay[i][pi] * ax[j][pj];
                assert!((got.get(0, i, j) - want).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn degrade_is_linear_without_clamping() {
        // smooth mid-range images keep every stage inside [0, 1]
        let a = Tensor::from_fn(1, 16, 16, |_, i, j| 0.4 + 0.1 * libm::sin(i as f64 * 0.3 + j as f64 * 0.2));
        let b = Tensor::from_fn(1, 16, 16, |_, i, j| 0.5 + 0.1 * libm::cos(i as f64 * 0.25 - j as f64 * 0.4));
        let alpha = 0.3;
        let mix = Tensor::from_fn(1, 16, 16, |_, i, j| alpha * a.get(0, i, j) + (1.0 - alpha) * b.get(0, i, j));
        let (da, db, dm) = (degrade(&a, 2).unwrap(), degrade(&b, 2).unwrap(), degrade(&mix, 2).unwrap());
        for idx in 0..256 {
            let want = alpha * da.as_slice()[idx] + (1.0 - alpha) * db.as_slice()[idx];
            assert!((dm.as_slice()[idx] - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn crop_to_multiple_trims_bottom_right() {
        let img = random(1, 10, 7, 3);
        let c = crop_to_multiple(&img, 4).unwrap();
        assert_eq!(c.spatial(), (8, 4));
        assert_eq!(c.get(0, 7, 3), img.get(0, 7, 3));
    }
}
