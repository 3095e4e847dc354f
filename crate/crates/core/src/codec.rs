//! Little-endian byte helpers shared by the checkpoint and wire formats.

use crate::error::{Error, Result};
use crate::numerics::{NamedTensors, Tensor};

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn str16(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len())
            .map_err(|_| Error::validation(format!("name {s:?} longer than {} bytes", u16::MAX)))?;
        self.u16(len);
        self.bytes(s.as_bytes());
        Ok(())
    }

    /// Tensor count (u32) followed by `name, rows, cols, values` per tensor.
    pub fn tensors(&mut self, tensors: &NamedTensors) -> Result<()> {
        let count = u32::try_from(tensors.len()).map_err(|_| Error::validation("too many tensors"))?;
        self.u32(count);
        for (name, t) in tensors {
            self.str16(name)?;
            self.u32(t.rows() as u32);
            self.u32(t.cols() as u32);
            for &v in t.data() {
                self.f64(v);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor that reports the byte offset of any truncation or bad field.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> ByteReader<'a> {
    /// `base` is added to reported offsets when `buf` is a slice of a larger frame.
    pub fn new(buf: &'a [u8], base: usize) -> Self {
        ByteReader { buf, pos: 0, base }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset(),
            reason: reason.into(),
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    pub fn str16(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let at = self.offset();
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: at,
            reason: format!("{what} is not valid UTF-8"),
        })
    }

    pub fn tensors(&mut self) -> Result<NamedTensors> {
        let count = self.u32("tensor count")?;
        let mut out = NamedTensors::new();
        for _ in 0..count {
            let at = self.offset();
            let name = self.str16("tensor name")?;
            let rows = self.u32("rows")? as usize;
            let cols = self.u32("cols")? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.remaining()))
                .ok_or_else(|| self.err(format!("truncated values of {name:?} ({rows}×{cols})")))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(self.f64("tensor value")?);
            }
            let t = Tensor::new(rows, cols, data).map_err(|e| Error::Format {
                offset: at,
                reason: format!("tensor {name:?}: {e}"),
            })?;
            if out.insert(name.clone(), t).is_some() {
                return Err(Error::Format {
                    offset: at,
                    reason: format!("duplicate tensor {name:?}"),
                });
            }
        }
        Ok(out)
    }

    pub fn finish(&self, what: &str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.err(format!("{} trailing bytes after {what}", self.remaining())));
        }
        Ok(())
    }
}

/// Splits `bytes` into body and trailing CRC32, verifying the checksum.
pub(crate) fn verify_crc(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: 0,
            reason: "too short to hold a CRC".into(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    Ok(body)
}

pub(crate) fn append_crc(w: &mut ByteWriter) {
    let crc = crc32fast::hash(w.as_slice());
    w.u32(crc);
}
