//! Little-endian framing shared by the embedding and checkpoint files.
//!
//! Every file ends with a `u64` XXH3-64 (seed 0) digest of all preceding bytes.

use std::fs;
use std::path::Path;

use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};

pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_magic(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        ByteWriter { buf }
    }

    pub fn reserve(&mut self, additional: usize) {
        self.buf.reserve(additional);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
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

    pub fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Appends the checksum and returns the finished file image.
    pub fn finish(mut self) -> Vec<u8> {
        let digest = xxh3_64(&self.buf);
        self.buf.extend_from_slice(&digest.to_le_bytes());
        self.buf
    }
}

#[derive(Clone)]
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Validates magic, version and trailing checksum, leaving the cursor on the
    /// first body byte.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(Error::format(
                0,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    found
                ),
            ));
        }
        if bytes.len() < 6 {
            return Err(Error::format(4, "truncated header: missing version"));
        }
        let found_version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if found_version != version {
            return Err(Error::format(
                4,
                format!("unsupported version {found_version} (expected {version})"),
            ));
        }
        if bytes.len() < 6 + 8 {
            return Err(Error::format(6, "truncated file: missing checksum"));
        }
        Ok(ByteReader {
            bytes: &bytes[..bytes.len() - 8],
            pos: 6,
        })
    }

    /// Checks the trailing digest against the body. Called after parsing so that
    /// structural errors (which carry better offsets) are reported first.
    pub fn verify_checksum(&self, full: &[u8]) -> Result<()> {
        let body_len = self.bytes.len();
        let stored = u64::from_le_bytes(full[body_len..body_len + 8].try_into().unwrap());
        let actual = xxh3_64(self.bytes);
        if stored != actual {
            return Err(Error::format(
                body_len as u64,
                format!("checksum mismatch: stored {stored:#018x}, computed {actual:#018x}"),
            ));
        }
        Ok(())
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn seek(&mut self, pos: u64) {
        self.pos = (pos as usize).min(self.bytes.len());
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} unexpected trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.remaining()
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let nbytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.offset(), format!("{what} size overflows")))?;
        let raw = self.take(nbytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self, what: &str) -> Result<String> {
        let start = self.offset();
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::format(start, format!("{what} is not valid UTF-8")))
    }
}

pub(crate) fn check_hash(path: &Path, expected: Option<u64>, found: u64) -> Result<()> {
    match expected {
        Some(expected) if expected != found => Err(Error::StaleArtifact {
            artifact: path.display().to_string(),
            expected,
            found,
        }),
        _ => Ok(()),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_detects_flipped_byte() {
        let mut w = ByteWriter::with_magic(b"TEST", 1);
        w.u32(7);
        w.str("hello");
        let mut bytes = w.finish();
        let r = ByteReader::open(&bytes, b"TEST", 1).unwrap();
        r.verify_checksum(&bytes).unwrap();

        bytes[8] ^= 0x01;
        let r = ByteReader::open(&bytes, b"TEST", 1).unwrap();
        assert!(matches!(r.verify_checksum(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_read_reports_offset() {
        let mut w = ByteWriter::with_magic(b"TEST", 1);
        w.u8(1);
        let bytes = w.finish();
        let mut r = ByteReader::open(&bytes, b"TEST", 1).unwrap();
        r.u8("flag").unwrap();
        match r.u32("count") {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 7);
                assert!(message.contains("count"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
