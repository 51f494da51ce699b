//! Registered image pairs and random patch sampling.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain_err, shape_err, Result};
use crate::image::degrade;
use crate::{Real, Tensor};

/// A high-resolution target, its guidance image and the degraded,
/// re-upsampled target the network sees.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair<T> {
    pub target_hr: Tensor<T>,
    pub guidance: Tensor<T>,
    pub target_lr_up: Tensor<T>,
    pub scale: usize,
}

impl<T: Real> ImagePair<T> {
    /// Degrade `target_hr` by `scale` to produce the network input.
    pub fn from_hr(target_hr: Tensor<T>, guidance: Tensor<T>, scale: usize) -> Result<Self> {
        let target_lr_up = degrade(&target_hr, scale)?;
        Self::new(target_hr, guidance, target_lr_up, scale)
    }

    pub fn new(target_hr: Tensor<T>, guidance: Tensor<T>, target_lr_up: Tensor<T>, scale: usize) -> Result<Self> {
        if scale != 2 && scale != 4 {
            return Err(domain_err!("scale must be 2 or 4, got {scale}"));
        }
        for (t, what) in [(&target_hr, "target"), (&guidance, "guidance"), (&target_lr_up, "degraded target")] {
            if t.channels() != 1 {
                return Err(shape_err!("{what} must be single-channel, got {:?}", t.shape()));
            }
        }
        if guidance.shape() != target_hr.shape() || target_lr_up.shape() != target_hr.shape() {
            return Err(shape_err!(
                "pair images differ in size: target {:?}, guidance {:?}, degraded {:?}",
                target_hr.spatial(),
                guidance.spatial(),
                target_lr_up.spatial()
            ));
        }
        Ok(Self {
            target_hr,
            guidance,
            target_lr_up,
            scale,
        })
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.target_hr.spatial()
    }
}

/// Aligned crops of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    pub lr_up: Tensor<T>,
    pub guidance: Tensor<T>,
    pub hr: Tensor<T>,
    /// Index of the source pair within the dataset.
    pub source: usize,
    pub top: usize,
    pub left: usize,
}

/// Where one patch comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub source: usize,
    pub top: usize,
    pub left: usize,
}

fn check_fits(h: usize, w: usize, size: usize) -> Result<()> {
    if size == 0 || size > h || size > w {
        return Err(domain_err!("patch size {size} does not fit a {h}×{w} image"));
    }
    Ok(())
}

fn positions(h: usize, w: usize, n: usize, size: usize, source: usize, seed: u64) -> Result<Vec<PatchSpec>> {
    check_fits(h, w, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let top = rng.random_range(0..=h - size);
            let left = rng.random_range(0..=w - size);
            PatchSpec { source, top, left }
        })
        .collect())
}

/// Seeded positions for `total` patches spread as evenly as possible over
/// images of the given sizes (earlier images get the remainder). Each image
/// draws from its own seed stream.
pub fn sample_positions(dims: &[(usize, usize)], total: usize, size: usize, seed: u64) -> Result<Vec<PatchSpec>> {
    if dims.is_empty() {
        if total > 0 {
            return Err(domain_err!("cannot sample {total} patches from no images"));
        }
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(total);
    for (i, &(h, w)) in dims.iter().enumerate() {
        let n = total / dims.len() + usize::from(i < total % dims.len());
        let stream = seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        out.extend(positions(h, w, n, size, i, stream)?);
    }
    Ok(out)
}

/// Aligned crop of one pair.
pub fn crop_patch<T: Real>(pair: &ImagePair<T>, spec: PatchSpec, size: usize) -> Result<Patch<T>> {
    Ok(Patch {
        lr_up: pair.target_lr_up.crop(spec.top, spec.left, size, size)?,
        guidance: pair.guidance.crop(spec.top, spec.left, size, size)?,
        hr: pair.target_hr.crop(spec.top, spec.left, size, size)?,
        source: spec.source,
        top: spec.top,
        left: spec.left,
    })
}

/// Crop `n` aligned `size × size` triples at seeded uniform positions.
pub fn extract_patches<T: Real>(pair: &ImagePair<T>, n: usize, size: usize, seed: u64) -> Result<Vec<Patch<T>>> {
    let (h, w) = pair.spatial();
    positions(h, w, n, size, 0, seed)?
        .into_iter()
        .map(|spec| crop_patch(pair, spec, size))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset<T> {
    pub patches: Vec<Patch<T>>,
    pub size: usize,
    pub seed: u64,
}

impl<T: Real> PatchDataset<T> {
    /// Materialize the patches chosen by [`sample_positions`].
    pub fn sample(pairs: &[ImagePair<T>], total: usize, size: usize, seed: u64) -> Result<Self> {
        let dims: Vec<_> = pairs.iter().map(|p| p.spatial()).collect();
        let patches = sample_positions(&dims, total, size, seed)?
            .into_iter()
            .map(|spec| crop_patch(&pairs[spec.source], spec, size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patches, size, seed })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn watermark_pair() -> ImagePair<f64> {
        // every pixel encodes its own coordinates, differently per image
        let enc = |off: f64| Tensor::from_fn(1, 20, 24, move |_, i, j| off + (i * 24 + j) as f64 * 1e-4);
        ImagePair::new(enc(0.0), enc(0.25), enc(0.5), 2).unwrap()
    }

    #[test]
    fn empty_request_gives_no_patches() {
        assert!(extract_patches(&watermark_pair(), 0, 8, 1).unwrap().is_empty());
    }

    #[test]
    fn patches_are_aligned_and_in_bounds() {
        let pair = watermark_pair();
        for p in extract_patches(&pair, 50, 8, 3).unwrap() {
            assert_eq!(p.hr.shape(), (1, 8, 8));
            assert!(p.top + 8 <= 20 && p.left + 8 <= 24);
            for i in 0..8 {
                for j in 0..8 {
                    let coord = ((p.top + i) * 24 + p.left + j) as f64 * 1e-4;
                    assert!((p.hr.get(0, i, j) - coord).abs() < 1e-12);
                    assert!((p.guidance.get(0, i, j) - 0.25 - coord).abs() < 1e-12);
                    assert!((p.lr_up.get(0, i, j) - 0.5 - coord).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn positions_are_seeded() {
        let pair = watermark_pair();
        let pos = |seed| {
            extract_patches(&pair, 10, 6, seed)
                .unwrap()
                .iter()
                .map(|p| (p.top, p.left))
                .collect::<Vec<_>>()
        };
        assert_eq!(pos(4), pos(4));
        assert_ne!(pos(4), pos(5));
    }

    #[test]
    fn oversize_patch_is_rejected() {
        assert!(extract_patches(&watermark_pair(), 1, 21, 0).is_err());
        assert!(extract_patches(&watermark_pair(), 1, 0, 0).is_err());
    }

    #[test]
    fn dataset_splits_count_over_pairs() {
        let pairs = [watermark_pair(), watermark_pair(), watermark_pair()];
        let ds = PatchDataset::sample(&pairs, 10, 8, 0).unwrap();
        assert_eq!(ds.len(), 10);
        let per: Vec<usize> = (0..3).map(|i| ds.patches.iter().filter(|p| p.source == i).count()).collect();
        assert_eq!(per, [4, 3, 3]);
        assert!(PatchDataset::<f64>::sample(&[], 1, 8, 0).is_err());
    }

    #[test]
    fn pair_validation() {
        let a = Tensor::<f64>::zeros(1, 8, 8);
        assert!(ImagePair::new(a.clone(), Tensor::zeros(1, 8, 6), a.clone(), 2).is_err());
        assert!(ImagePair::new(a.clone(), a.clone(), a.clone(), 3).is_err());
        let p = ImagePair::from_hr(Tensor::filled(1, 8, 8, 0.5), a, 4).unwrap();
        assert!(p.target_lr_up.as_slice().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }
}
