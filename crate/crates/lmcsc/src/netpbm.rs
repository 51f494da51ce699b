//! Binary PGM (P5) and PPM (P6) images, 8-bit, maxval 255.
//!
//! Pixels load as `byte / 255`; saving multiplies by 255, rounds half away
//! from zero and clamps to `[0, 255]`.

use std::fs;
use std::path::Path;

use lmcsc_core::{Real, Tensor};

use crate::error::{io_err, Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> std::result::Result<usize, (usize, String)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, "expected a decimal number in the header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, "header number out of range".into()))
    }
}

/// Decode a P5 or P6 byte stream into a 1- or 3-channel tensor.
pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(fail(0, "expected magic P5 (PGM) or P6 (PPM)".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let mut header = || cur.number().map_err(|(o, r)| fail(o, r));
    let width = header()?;
    let height = header()?;
    let maxval_at = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let maxval = cur.number().map_err(|(o, r)| fail(o, r))?;
    if maxval != 255 {
        return Err(fail(maxval_at, format!("unsupported maxval {maxval}, only 255 is accepted")));
    }
    if width == 0 || height == 0 {
        return Err(fail(2, format!("empty image {width}x{height}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(fail(cur.pos, "expected one whitespace byte before the pixel data".into())),
    }
    let need = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(fail(
            bytes.len(),
            format!("truncated pixel data: {} of {need} bytes", payload.len()),
        ));
    }
    let scale = T::of_f64(255.0);
    // interleaved RGB to planar
    let plane = width * height;
    let mut data = vec![T::zero(); need];
    for (i, &b) in payload[..need].iter().enumerate() {
        let (px, c) = (i / channels, i % channels);
        data[c * plane + px] = T::of_f64(f64::from(b)) / scale;
    }
    Ok(Tensor::from_vec(channels, height, width, data)?)
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}

/// Load a single-channel P5 image.
pub fn load_pgm<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let t = load(path)?;
    if t.channels() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "expected a grayscale P5 image, found P6".into(),
        });
    }
    Ok(t)
}

/// Load a three-channel P6 image.
pub fn load_ppm<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let t = load(path)?;
    if t.channels() != 3 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "expected an RGB P6 image, found P5".into(),
        });
    }
    Ok(t)
}

pub fn quantize<T: Real>(v: T) -> u8 {
    (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encode a 1-channel tensor as P5 or a 3-channel tensor as P6.
pub fn encode<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = img.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(lmcsc_core::Error::Shape(format!("cannot store a {c}-channel image as PGM/PPM")).into())
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = img.as_slice();
    out.reserve(c * plane);
    for px in 0..plane {
        for ch in 0..c {
            out.push(quantize(data[ch * plane + px]));
        }
    }
    Ok(out)
}

pub fn save<T: Real>(img: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)?).map_err(io_err(path))
}
