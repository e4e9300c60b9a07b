//! Little-endian binary framing shared by the pack, delta, and index file
//! formats. Every field is pinned so serialized artifacts are portable and
//! round-trip bit-exactly.

use thiserror::Error;

use crate::model::Fingerprint;

pub const PACK_MAGIC: &[u8; 4] = b"KVPK";
pub const DELTA_MAGIC: &[u8; 4] = b"KVSD";
pub const INDEX_MAGIC: &[u8; 4] = b"KVBI";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated stream: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("bad field: {0}")]
    BadField(String),
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, m: &[u8; 4]) {
        self.buf.extend_from_slice(m);
        self.u16(FORMAT_VERSION);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32_slice(&mut self, v: &[f32]) {
        for &x in v {
            self.f32(x);
        }
    }

    pub fn fingerprint(&mut self, fp: Fingerprint) {
        self.buf.extend_from_slice(fp.to_hex().as_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn fingerprint(&mut self) -> Result<Fingerprint, FormatError> {
        let raw = self.take(16)?;
        let s = std::str::from_utf8(raw)
            .map_err(|_| FormatError::BadField("fingerprint is not ASCII hex".to_string()))?;
        s.parse().map_err(FormatError::BadField)
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| FormatError::BadField("string is not UTF-8".to_string()))
    }

    /// Reject trailing bytes so a corrupted length field cannot pass.
    pub fn finish(&self) -> Result<(), FormatError> {
        let left = self.buf.len() - self.pos;
        if left != 0 {
            return Err(FormatError::SizeMismatch(format!(
                "{left} trailing bytes after end of record"
            )));
        }
        Ok(())
    }
}

/// Peek at a file's magic to tell pack, delta, and index files apart.
pub fn identify(bytes: &[u8]) -> Option<&'static str> {
    if bytes.len() < 4 {
        return None;
    }
    match &bytes[..4] {
        m if m == PACK_MAGIC => Some("pack"),
        m if m == DELTA_MAGIC => Some("delta"),
        m if m == INDEX_MAGIC => Some("index"),
        _ => None,
    }
}
