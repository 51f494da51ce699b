//! Glue between trained parameters, manifests and the evaluation code.

use lmcsc_core::dataset::sample_positions;
use lmcsc_core::image::{bicubic_resize, rgb_to_luminance};
use lmcsc_core::metrics::SrMethod;
use lmcsc_core::network::{predict, NetworkParams};
use lmcsc_core::Tensor;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::manifest::{load_manifest, load_split, Manifest, Split};
use crate::trainer::LazyPatches;

/// Seed stream for validation patch positions, kept apart from training.
const VALIDATION_STREAM: u64 = 0x7a11_da7e_0000_0001;

/// A trained network used as a super-resolution method.
#[derive(Debug, Clone)]
pub struct Network {
    pub params: NetworkParams<f32>,
}

impl SrMethod<f32> for Network {
    fn name(&self) -> &str {
        "lmcsc"
    }
    fn super_resolve(&self, lr_up: &Tensor<f32>, guidance: &Tensor<f32>) -> lmcsc_core::Result<Tensor<f32>> {
        predict(lr_up, guidance, &self.params)
    }
}

/// Training and validation patches from the manifest's train split.
/// Validation patches come from the same images at independent positions.
pub fn training_patches(cfg: &TrainConfig, manifest: &Manifest) -> Result<(LazyPatches, LazyPatches)> {
    let pairs: Vec<_> = load_split::<f32>(manifest, Split::Train, cfg.scale)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let dims: Vec<_> = pairs.iter().map(|p| p.spatial()).collect();
    let train = sample_positions(&dims, cfg.patches_total, cfg.patch_size, cfg.seed)?;
    let val = sample_positions(&dims, cfg.val_patches, cfg.patch_size, cfg.seed ^ VALIDATION_STREAM)?;
    let make = |specs| LazyPatches {
        pairs: pairs.clone(),
        specs,
        size: cfg.patch_size,
    };
    Ok((make(train), make(val)))
}

pub fn load_training_manifest(cfg: &TrainConfig) -> Result<Manifest> {
    let path = cfg.manifest_path.as_ref().ok_or_else(|| crate::error::Error::Config {
        path: "<config>".into(),
        reason: "`manifest_path` is required for training".into(),
    })?;
    load_manifest(path)
}

/// Guidance luminance from either a grayscale or an RGB image.
pub fn as_luminance(img: Tensor<f32>) -> Result<Tensor<f32>> {
    if img.channels() == 3 {
        Ok(rgb_to_luminance(&img)?)
    } else {
        Ok(img)
    }
}

/// Bicubically upsample a low-resolution target to the guidance size and run
/// the network.
pub fn super_resolve(params: &NetworkParams<f32>, lr: &Tensor<f32>, guidance: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = guidance.spatial();
    let up = bicubic_resize(lr, h, w)?;
    Ok(predict(&up, guidance, params)?)
}
