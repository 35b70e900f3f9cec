//! Little-endian record encoding shared by the demo and checkpoint files.

use std::hash::Hasher;

use crate::error::{Error, Result};

pub(crate) const MAGIC_LEN: usize = 12;

pub(crate) fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn header(magic: &[u8; MAGIC_LEN], version: u32) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.buf.extend_from_slice(&version.to_le_bytes());
        w
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    /// Appends the checksum of everything written so far.
    pub(crate) fn finish(mut self) -> Vec<u8> {
        let sum = fnv64(&self.buf);
        self.u64(sum);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and checksum, then positions after the header.
    pub(crate) fn open(data: &'a [u8], magic: &[u8; MAGIC_LEN], version: u32, what: &str) -> Result<Self> {
        if data.len() < MAGIC_LEN + 4 || &data[..MAGIC_LEN] != magic {
            return Err(Error::Integrity(format!("not a {what} file")));
        }
        let found = u32::from_le_bytes(data[MAGIC_LEN..MAGIC_LEN + 4].try_into().expect("4 bytes"));
        if found != version {
            return Err(Error::Version { found, expected: version });
        }
        if data.len() < MAGIC_LEN + 4 + 8 {
            return Err(Error::Integrity(format!("{what} file is truncated")));
        }
        let (body, tail) = data.split_at(data.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv64(body) != stored {
            return Err(Error::Integrity(format!("{what} checksum mismatch (truncated or corrupted)")));
        }
        Ok(Self { buf: body, pos: MAGIC_LEN + 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Integrity("record runs past end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length does not fit in memory".into()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Integrity("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub(crate) fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
