//! Self-describing binary container shared by the binary artifacts.
//!
//! Layout: 8-byte magic, u32 format version, u64 payload length, payload,
//! 32-byte SHA-256 of the payload. All integers little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) fn write_container(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    payload: &[u8],
) -> Result<()> {
    let mut out = Vec::with_capacity(payload.len() + 52);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&Sha256::digest(payload));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_container(path: &Path, magic: &[u8; 8], version: u32) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 52 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "file too short for container header".into(),
        });
    }
    if &bytes[0..8] != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "bad magic {:?}, expected {:?}",
                &bytes[0..8],
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found,
            expected: version,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() != 20 + len + 32 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "payload length does not match file size".into(),
        });
    }
    let payload = &bytes[20..20 + len];
    let digest = &bytes[20 + len..];
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    Ok(payload.to_vec())
}

/// Cursor over a container payload for fixed-width decoding.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: "truncated payload".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: "trailing bytes after payload".into(),
            });
        }
        Ok(())
    }
}

pub(crate) fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64_slice(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        push_f64(buf, *v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"QFPTEST\0";

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_container(&path, MAGIC, 1, b"hello").unwrap();
        assert_eq!(read_container(&path, MAGIC, 1).unwrap(), b"hello");
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_container(&path, MAGIC, 1, b"hello").unwrap();
        let err = read_container(&path, b"QFPOTHER", 1).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_container(&path, MAGIC, 2, b"hello").unwrap();
        assert!(matches!(
            read_container(&path, MAGIC, 1).unwrap_err(),
            Error::Version { found: 2, .. }
        ));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_container(&path, MAGIC, 1, b"hello").unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[21] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_container(&path, MAGIC, 1).unwrap_err(),
            Error::Checksum { .. }
        ));
    }
}
