//! Binary checkpoint format.
//!
//! ```text
//! "TFLN"            4 bytes magic
//! version           u32 LE (= 1)
//! global_step       u64 LE
//! tensor count      u32 LE
//! per tensor:       name_len u16 LE, UTF-8 name, rows u32 LE, cols u32 LE,
//!                   rows*cols f64 LE values (row-major)
//! crc32             u32 LE over every preceding byte
//! ```
//!
//! Tensors are written in name order, so identical contents give identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{append_crc, verify_crc, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::NamedTensors;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFLN";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_PREFIX: &str = "ckpt-";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub global_step: u64,
    pub tensors: NamedTensors,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.global_step);
        w.tensors(&self.tensors)?;
        append_crc(&mut w);
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, 0);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic, not a checkpoint file".into(),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported checkpoint version {version}"),
            });
        }
        let body_len = bytes.len().saturating_sub(4);
        let mut r = ByteReader::new(&bytes[8..body_len.max(8)], 8);
        let global_step = r.u64("global step")?;
        let tensors = r.tensors()?;
        r.finish("last tensor")?;
        verify_crc(bytes)?;
        Ok(Checkpoint { global_step, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        // Write-then-rename so readers never observe a partial file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub fn checkpoint_file_name(global_step: u64) -> String {
    format!("{CHECKPOINT_PREFIX}{global_step}")
}

/// All `ckpt-N` files in `dir`, sorted by step.
pub fn list_checkpoints(dir: impl AsRef<Path>) -> Result<Vec<(u64, PathBuf)>> {
    let dir = dir.as_ref();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(step) = name
            .to_str()
            .and_then(|n| n.strip_prefix(CHECKPOINT_PREFIX))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn latest_checkpoint(dir: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    Ok(list_checkpoints(dir)?.pop().map(|(_, p)| p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn sample() -> Checkpoint {
        Checkpoint {
            global_step: 42,
            tensors: NamedTensors::from([
                ("a".into(), Tensor::from_rows(&[[1.5, -0.0], [f64::MIN_POSITIVE, 3.0]]).unwrap()),
                ("b/bias".into(), Tensor::scalar(0.1)),
            ]),
        }
    }

    #[test]
    fn layout_is_exact() {
        let bytes = Checkpoint {
            global_step: 7,
            tensors: NamedTensors::from([("w".into(), Tensor::scalar(2.0))]),
        }
        .encode()
        .unwrap();
        let mut expected = b"TFLN".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(7u64.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u16.to_le_bytes());
        expected.extend(b"w");
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2.0f64.to_le_bytes());
        let crc = crc32fast::hash(&expected);
        expected.extend(crc.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode().unwrap()).unwrap();
        assert_eq!(back.global_step, 42);
        for (k, v) in &c.tensors {
            assert!(v.bit_eq(&back.tensors[k]));
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().encode().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn bad_version() {
        let mut bytes = sample().encode().unwrap();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = sample().encode().unwrap();
        let err = Checkpoint::decode(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("offset"));
    }

    #[test]
    fn flipped_value_byte_fails_crc() {
        let mut bytes = sample().encode().unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 0x01;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Crc { .. })));
    }

    #[test]
    fn lists_latest() {
        let dir = tempfile::tempdir().unwrap();
        for step in [2, 10, 4] {
            sample().save(dir.path().join(checkpoint_file_name(step))).unwrap();
        }
        std::fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        let steps: Vec<u64> = list_checkpoints(dir.path()).unwrap().into_iter().map(|(s, _)| s).collect();
        assert_eq!(steps, vec![2, 4, 10]);
        assert!(latest_checkpoint(dir.path()).unwrap().unwrap().ends_with("ckpt-10"));
    }
}
