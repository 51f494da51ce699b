//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LMCS"  u32 version
//! u32 len, UTF-8 TOML header (step, optional adam_step, [config])
//! u32 tensor count
//! per tensor: u32 len, UTF-8 name, u8 rank, rank × u32 dims, f32 payload
//! u32 CRC-32 of everything above
//! ```
//!
//! Adam moments, when present, are stored as `adam.m.<name>` and
//! `adam.v.<name>` next to the parameters they belong to.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lmcsc_core::adam::{AdamState, ParamSet};
use lmcsc_core::network::{init_params, NetworkParams};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"LMCS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimizer steps taken when the parameters were saved.
    pub step: u64,
    pub params: NetworkParams<f32>,
    pub adam: Option<AdamState<NetworkParams<f32>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    adam_step: Option<u64>,
    config: TrainConfig,
}

/// Names, dims and data of every parameter tensor in canonical order.
fn tensors(params: &NetworkParams<f32>) -> Vec<(String, Vec<u32>, &[f32])> {
    let (k, s) = (params.num_atoms() as u32, params.kernel_size() as u32);
    params
        .named_params()
        .into_iter()
        .map(|(name, data)| {
            let dims = if name.ends_with(".mu") || name.ends_with(".gamma") {
                vec![]
            } else if name.ends_with(".q") || name.ends_with(".p") {
                vec![k, 1, s, s]
            } else {
                vec![1, k, s, s]
            };
            (name, dims, data)
        })
        .collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[u32], data: &[f32]) {
    put_str(out, name);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend(d.to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            step: self.step,
            adam_step: self.adam.as_ref().map(|a| a.step),
            config: self.config.clone(),
        };
        let mut out = MAGIC.to_vec();
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &toml::to_string(&header).expect("header serializes"));

        let main = tensors(&self.params);
        let moments = self.adam.as_ref().map(|a| (tensors(&a.m), tensors(&a.v)));
        let count = main.len() * if moments.is_some() { 3 } else { 1 };
        out.extend((count as u32).to_le_bytes());
        for (i, (name, dims, data)) in main.iter().enumerate() {
            put_tensor(&mut out, name, dims, data);
            if let Some((m, v)) = &moments {
                put_tensor(&mut out, &format!("adam.m.{name}"), dims, m[i].2);
                put_tensor(&mut out, &format!("adam.v.{name}"), dims, v[i].2);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend(crc.to_le_bytes());
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing LMCS magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                path: path.to_path_buf(),
                found: version,
                expected: VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch".into()));
        }

        let mut r = Reader { buf: body, pos: 8 };
        let header_text = r.string().map_err(corrupt)?;
        let header: Header =
            toml::from_str(&header_text).map_err(|e| corrupt(format!("bad header: {}", e.message())))?;
        header
            .config
            .validate()
            .map_err(|e| corrupt(format!("bad header: {e}")))?;

        let count = r.u32().map_err(corrupt)? as usize;
        let mut found: BTreeMap<String, (Vec<u32>, Vec<f32>)> = BTreeMap::new();
        for _ in 0..count {
            let name = r.string().map_err(corrupt)?;
            let rank = r.u8().map_err(corrupt)? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>().map_err(corrupt)?;
            let n = dims.iter().map(|&d| d as usize).product::<usize>();
            let data = (0..n).map(|_| r.f32()).collect::<std::result::Result<Vec<_>, _>>().map_err(corrupt)?;
            if found.insert(name.clone(), (dims, data)).is_some() {
                return Err(corrupt(format!("tensor `{name}` appears twice")));
            }
        }
        if r.pos != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }

        let template = init_params::<f32>(&header.config.net(), 0)?.zeros_like();
        let mut take = |prefix: &str| -> Result<NetworkParams<f32>> {
            let mut p = template.clone();
            let layout: Vec<(String, Vec<u32>)> =
                tensors(&template).into_iter().map(|(n, d, _)| (n, d)).collect();
            for ((name, dims), slot) in layout.into_iter().zip(p.param_slices_mut()) {
                let key = format!("{prefix}{name}");
                let (got_dims, data) = found
                    .remove(&key)
                    .ok_or_else(|| corrupt(format!("missing tensor `{key}`")))?;
                if got_dims != dims {
                    return Err(corrupt(format!("tensor `{key}` has dims {got_dims:?}, expected {dims:?}")));
                }
                slot.copy_from_slice(&data);
            }
            Ok(p)
        };
        let params = take("")?;
        let adam = match header.adam_step {
            Some(step) => Some(AdamState {
                step,
                m: take("adam.m.")?,
                v: take("adam.v.")?,
                hyper: header.config.adam(),
            }),
            None => None,
        };
        if let Some(extra) = found.keys().next() {
            return Err(corrupt(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            params,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path: PathBuf = path.as_ref().to_path_buf();
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Self::from_bytes(&bytes, &path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format!("invalid UTF-8 at byte {at}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lmcsc_core::adam::{adam_step, AdamHyper};

    fn small() -> Checkpoint {
        let config = TrainConfig {
            k: 3,
            kernel_size: 3,
            stages_lmcsc: 2,
            stages_guidance: 1,
            ..TrainConfig::default()
        };
        let params = init_params::<f32>(&config.net(), 5).unwrap();
        Checkpoint {
            config,
            step: 0,
            params,
            adam: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = small();
        c.params.lmcsc[0].mu = f32::from_bits(0x3e4c_cccd);
        c.params.decoder.as_mut_slice()[0] = -0.0;
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params.decoder.as_slice()[0].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut c = small();
        let mut st = AdamState::new(&c.params, AdamHyper::default());
        let g = c.params.clone();
        adam_step(&mut c.params, &g, &mut st).unwrap();
        c.adam = Some(st);
        c.step = 1;
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flipped_byte_fails_crc() {
        let bytes = small().to_bytes();
        let mut bad = bytes.clone();
        let i = bytes.len() - 10;
        bad[i] ^= 0x01;
        match Checkpoint::from_bytes(&bad, Path::new("x")) {
            Err(Error::Checkpoint { reason, .. }) => assert!(reason.contains("CRC")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn higher_version_is_reported() {
        let mut bytes = small().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Path::new("x")),
            Err(Error::CheckpointVersion { found: 2, expected: 1, .. })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"NOPE0000000000", Path::new("x")),
            Err(Error::Checkpoint { .. })
        ));
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let bytes = small().to_bytes();
        assert_eq!(&bytes[..4], b"LMCS");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + n]).unwrap();
        assert!(header.starts_with("step = 0\n"), "{header}");
        assert!(header.contains("[config]"));
        let count = u32::from_le_bytes(bytes[12 + n..16 + n].try_into().unwrap());
        assert_eq!(count, 13);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lmcs");
        let c = small();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }
}
