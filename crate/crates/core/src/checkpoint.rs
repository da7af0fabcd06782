//! Versioned checkpoint container.
//!
//! Layout:
//!
//! ```text
//! CHGCKPT1                      8 magic bytes
//! <u32 LE>                      manifest length in bytes
//! <manifest>                    UTF-8 lines, see below
//! <payload>                     little-endian f64 tensors and raw blobs
//! ```
//!
//! Manifest lines (offsets relative to the payload start):
//!
//! ```text
//! config_hash <16 hex digits>
//! meta <key> <value>
//! tensor <name> f64 <rows>x<cols> <offset> <nbytes>
//! blob <name> <offset> <nbytes>
//! ```
//!
//! Names and meta keys contain no whitespace; meta values run to the end
//! of the line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CHGCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint manifest: {0}")]
    Format(String),
    #[error("checkpoint lacks `{0}`")]
    Missing(String),
    #[error("checkpoint was written for a different configuration: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn blob(&self, name: &str) -> Option<&[u8]> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn meta_value(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta.get(key).map(|s| s.as_str()).ok_or_else(|| CheckpointError::Missing(format!("meta {key}")))
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        self.meta_value(key)?
            .parse()
            .map_err(|_| CheckpointError::Format(format!("meta {key} does not parse")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = format!("config_hash {:016x}\n", self.config_hash);
        for (k, v) in &self.meta {
            let _ = writeln!(manifest, "meta {k} {v}");
        }
        let mut payload: Vec<u8> = Vec::new();
        for (name, t) in &self.tensors {
            let off = payload.len();
            for x in &t.data {
                payload.extend_from_slice(&x.to_le_bytes());
            }
            let _ = writeln!(manifest, "tensor {name} f64 {}x{} {off} {}", t.rows, t.cols, payload.len() - off);
        }
        for (name, b) in &self.blobs {
            let _ = writeln!(manifest, "blob {name} {} {}", payload.len(), b.len());
            payload.extend_from_slice(b);
        }
        let mut out = Vec::with_capacity(12 + manifest.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let len_bytes: [u8; 4] = bytes.get(8..12).ok_or(CheckpointError::Truncated)?.try_into().unwrap();
        let mlen = u32::from_le_bytes(len_bytes) as usize;
        let manifest = bytes.get(12..12 + mlen).ok_or(CheckpointError::Truncated)?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| CheckpointError::Format("manifest is not UTF-8".into()))?;
        let payload = &bytes[12 + mlen..];
        let slice = |off: &str, n: &str| -> Result<&[u8], CheckpointError> {
            let off: usize = off.parse().map_err(|_| CheckpointError::Format(format!("bad offset {off}")))?;
            let n: usize = n.parse().map_err(|_| CheckpointError::Format(format!("bad length {n}")))?;
            payload.get(off..off + n).ok_or(CheckpointError::Truncated)
        };

        let mut ck = Checkpoint::default();
        let mut saw_hash = false;
        for line in manifest.lines() {
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["config_hash", h] => {
                    ck.config_hash = u64::from_str_radix(h, 16).map_err(|_| CheckpointError::Format("bad config hash".into()))?;
                    saw_hash = true;
                }
                ["meta", key, ..] => {
                    let value = line.splitn(3, ' ').nth(2).unwrap_or("");
                    ck.meta.insert(key.to_string(), value.to_string());
                }
                ["tensor", name, "f64", shape, off, n] => {
                    let (r, c) = shape.split_once('x').ok_or_else(|| CheckpointError::Format(format!("bad shape {shape}")))?;
                    let parse = |s: &str| s.parse::<usize>().map_err(|_| CheckpointError::Format(format!("bad shape {shape}")));
                    let (rows, cols) = (parse(r)?, parse(c)?);
                    let raw = slice(off, n)?;
                    if raw.len() != rows * cols * 8 {
                        return Err(CheckpointError::Format(format!("tensor {name} size does not match its shape")));
                    }
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    ck.tensors.push((name.to_string(), Tensor::new(rows, cols, data)));
                }
                ["blob", name, off, n] => ck.blobs.push((name.to_string(), slice(off, n)?.to_vec())),
                _ => return Err(CheckpointError::Format(format!("unrecognized line `{line}`"))),
            }
        }
        if !saw_hash {
            return Err(CheckpointError::Missing("config_hash".into()));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint {
            config_hash: 0xdead_beef_0123_4567,
            ..Default::default()
        };
        ck.meta.insert("epoch".into(), "3".into());
        ck.meta.insert("note".into(), "two words".into());
        ck.tensors.push(("enc.input.w".into(), Tensor::new(2, 2, vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25])));
        ck.tensors.push(("enc.l0.eps".into(), Tensor::scalar(0.0)));
        ck.blobs.push(("vocab".into(), b"#psm-vocab v1 size=0\n".to_vec()));
        ck
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_parsed::<u32>("epoch").unwrap(), 3);
        assert_eq!(back.meta_value("note").unwrap(), "two words");
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT"), Err(CheckpointError::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated)));
    }
}
