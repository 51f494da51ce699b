//! Training configuration files (TOML).
//!
//! Every key is optional; missing keys take the defaults below and unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use lmcsc_core::adam::AdamHyper;
use lmcsc_core::network::NetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Upscaling factor, 2 or 4.
    pub scale: usize,
    pub k: usize,
    pub kernel_size: usize,
    pub stages_lmcsc: usize,
    pub stages_guidance: usize,
    pub tied_weights: bool,
    pub patch_size: usize,
    pub patches_total: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub seed: u64,
    pub init_std: f64,
    pub init_threshold: f64,
    /// Validation PSNR is measured every this many steps (0 disables it).
    pub eval_every: u64,
    /// Stop after this many evaluations without a new best validation PSNR
    /// (0 disables early stopping).
    pub patience: u64,
    /// Held-out patches drawn from the training images at fresh positions.
    pub val_patches: usize,
    /// Relative paths resolve against the config file's directory.
    pub manifest_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let adam = AdamHyper::default();
        Self {
            scale: 2,
            k: net.k,
            kernel_size: net.kernel_size,
            stages_lmcsc: net.stages_lmcsc,
            stages_guidance: net.stages_guidance,
            tied_weights: net.tied_weights,
            patch_size: 64,
            patches_total: 40_000,
            batch_size: 32,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            steps: 50_000,
            seed: 0,
            init_std: net.init_std,
            init_threshold: net.init_threshold,
            eval_every: 500,
            patience: 10,
            val_patches: 256,
            manifest_path: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// A value outside its allowed range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeError {
    pub key: &'static str,
    pub reason: String,
}

impl std::fmt::Display for RangeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "`{}` {}", self.key, self.reason)
    }
}

impl TrainConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig {
            k: self.k,
            kernel_size: self.kernel_size,
            stages_lmcsc: self.stages_lmcsc,
            stages_guidance: self.stages_guidance,
            tied_weights: self.tied_weights,
            init_std: self.init_std,
            init_threshold: self.init_threshold,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), RangeError> {
        let bad = |key, reason: &str| {
            Err(RangeError {
                key,
                reason: reason.to_string(),
            })
        };
        if self.scale != 2 && self.scale != 4 {
            return bad("scale", "must be 2 or 4");
        }
        if let Err(lmcsc_core::Error::Config { key, reason }) = self.net().validate() {
            return Err(RangeError { key, reason });
        }
        for (key, v) in [
            ("patch_size", self.patch_size),
            ("patches_total", self.patches_total),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if !self.patch_size.is_multiple_of(self.scale) {
            return bad("patch_size", "must be a multiple of scale");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be positive");
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(key, "must lie in [0, 1)");
            }
        }
        if !(self.eps > 0.0) {
            return bad("eps", "must be positive");
        }
        if self.eval_every > 0 && self.val_patches == 0 {
            return bad("val_patches", "must be at least 1 when eval_every > 0");
        }
        Ok(())
    }

    /// Parse TOML text; `origin` only labels errors.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Config {
            path: origin.to_path_buf(),
            reason,
        };
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| fail(describe_toml_error(text, &e)))?;
        cfg.validate().map_err(|e| fail(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Load a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.manifest_path {
            if m.is_relative() {
                cfg.manifest_path = Some(base.join(m));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }
}

/// `line N: message`, falling back to the parser's own text.
fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}
