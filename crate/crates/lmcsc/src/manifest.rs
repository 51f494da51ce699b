//! Dataset manifests: one `nir_path<TAB>rgb_path<TAB>split` record per line.
//!
//! Blank lines and lines starting with `#` are skipped. Relative paths are
//! resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use lmcsc_core::dataset::ImagePair;
use lmcsc_core::image::{crop_to_multiple, rgb_to_luminance};
use lmcsc_core::{Real, Tensor};

use crate::error::{io_err, Error, Result};
use crate::netpbm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub nir: PathBuf,
    pub rgb: PathBuf,
    pub split: Split,
    /// 1-based line number in the manifest.
    pub line: usize,
    pub height: usize,
    pub width: usize,
}

impl Entry {
    /// File stem of the NIR image, used as the row label in metric tables.
    pub fn name(&self) -> String {
        self.nir
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("line{}", self.line))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<Entry>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

fn image_dims(path: &Path) -> Result<(usize, usize, usize)> {
    let t: Tensor<f32> = netpbm::load(path)?;
    Ok(t.shape())
}

/// Parse and validate a manifest: every file must exist and decode, NIR
/// images must be grayscale, RGB images colour, and each pair equal in size.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let fail = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        let [nir, rgb, split] = fields[..] else {
            return Err(fail(line, format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        let split = match split.trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(fail(line, format!("split must be `train` or `test`, got `{other}`"))),
        };
        let nir = base.join(nir.trim());
        let rgb = base.join(rgb.trim());
        for p in [&nir, &rgb] {
            if !p.is_file() {
                return Err(fail(line, format!("missing file {}", p.display())));
            }
        }
        let described = |e: Error| fail(line, e.to_string());
        let (nc, nh, nw) = image_dims(&nir).map_err(described)?;
        let (rc, rh, rw) = image_dims(&rgb).map_err(described)?;
        if nc != 1 {
            return Err(fail(line, format!("{} is not a grayscale P5 image", nir.display())));
        }
        if rc != 3 {
            return Err(fail(line, format!("{} is not an RGB P6 image", rgb.display())));
        }
        if (nh, nw) != (rh, rw) {
            return Err(fail(
                line,
                format!(
                    "size mismatch: {} is {nw}x{nh} but {} is {rw}x{rh}",
                    nir.display(),
                    rgb.display()
                ),
            ));
        }
        entries.push(Entry {
            nir,
            rgb,
            split,
            line,
            height: nh,
            width: nw,
        });
    }
    let mut warnings = Vec::new();
    if entries.is_empty() {
        warnings.push(format!("manifest {} lists no images", path.display()));
    }
    Ok(Manifest {
        path: path.to_path_buf(),
        entries,
        warnings,
    })
}

/// Load one entry as a training/evaluation pair: the NIR image is the target,
/// the luminance of the RGB image is the guidance. Both are cropped to a
/// multiple of `scale` before the target is degraded.
pub fn load_pair<T: Real>(entry: &Entry, scale: usize) -> Result<ImagePair<T>> {
    let nir: Tensor<T> = netpbm::load_pgm(&entry.nir)?;
    let rgb: Tensor<T> = netpbm::load_ppm(&entry.rgb)?;
    let guidance = rgb_to_luminance(&rgb)?;
    let target = crop_to_multiple(&nir, scale)?;
    let guidance = crop_to_multiple(&guidance, scale)?;
    Ok(ImagePair::from_hr(target, guidance, scale)?)
}

pub fn load_split<T: Real>(manifest: &Manifest, split: Split, scale: usize) -> Result<Vec<(String, ImagePair<T>)>> {
    manifest
        .split(split)
        .map(|e| Ok((e.name(), load_pair(e, scale)?)))
        .collect()
}
