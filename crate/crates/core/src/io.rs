//! Small file helpers shared by the exporters.
//!
//! Every CSV written by the crate may begin with `#` comment lines; readers
//! skip them. Binary caches are little-endian and start with a four-byte
//! magic, a `u32` format version, and the provenance block (32-byte config
//! digest followed by the `u64` seed).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Identifies the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Provenance {
    /// Hex SHA-256 of the configuration text; empty for library-only use.
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: impl Into<String>, seed: u64) -> Self {
        Self {
            config_sha256: config_sha256.into(),
            seed,
        }
    }

    pub fn csv_comment(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_sha256, self.seed)
    }

    fn digest_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        if let Ok(bytes) = hex::decode(&self.config_sha256) {
            let n = bytes.len().min(32);
            out[..n].copy_from_slice(&bytes[..n]);
        }
        out
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_all(w: &mut impl Write, path: &Path, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a CSV file: provenance comment, header, then rows.
pub(crate) fn write_csv<I>(path: &Path, provenance: &Provenance, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    write_all(&mut w, path, provenance.csv_comment().as_bytes())?;
    write_all(&mut w, path, header.as_bytes())?;
    write_all(&mut w, path, b"\n")?;
    for row in rows {
        write_all(&mut w, path, row.as_bytes())?;
        write_all(&mut w, path, b"\n")?;
    }
    finish(w, path)
}

/// Non-comment, non-empty lines of a text file, with comment lines returned separately.
pub(crate) fn read_lines(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let mut comments = Vec::new();
    let mut lines = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(c) = trimmed.strip_prefix('#') {
            comments.push(c.trim().to_string());
        } else {
            lines.push(trimmed.to_string());
        }
    }
    Ok((comments, lines))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("json encoding failed: {e}")))?;
    text.push('\n');
    let mut w = create(path)?;
    write_all(&mut w, path, text.as_bytes())?;
    finish(w, path)
}

/// Little-endian binary writer with a typed header.
pub(crate) struct BinWriter<'p> {
    inner: BufWriter<File>,
    path: &'p Path,
}

impl<'p> BinWriter<'p> {
    pub fn create(path: &'p Path, magic: &[u8; 4], version: u32, provenance: &Provenance) -> Result<Self> {
        let mut w = Self {
            inner: create(path)?,
            path,
        };
        w.bytes(magic)?;
        w.u32(version)?;
        w.bytes(&provenance.digest_bytes())?;
        w.u64(provenance.seed)?;
        Ok(w)
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        write_all(&mut self.inner, self.path, b)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(self) -> Result<()> {
        finish(self.inner, self.path)
    }
}

/// Reader matching [`BinWriter`].
pub(crate) struct BinReader<'p> {
    inner: BufReader<File>,
    path: &'p Path,
}

impl<'p> BinReader<'p> {
    /// Opens `path`, checks magic and version, and returns the stored seed.
    pub fn open(path: &'p Path, magic: &[u8; 4], version: u32) -> Result<(Self, u64)> {
        let mut r = Self {
            inner: open(path)?,
            path,
        };
        let mut m = [0u8; 4];
        r.exact(&mut m)?;
        if &m != magic {
            return Err(Error::InvalidInput(format!(
                "{} is not a {} file",
                path.display(),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = r.u32()?;
        if v != version {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported format version {v}",
                path.display()
            )));
        }
        let mut digest = [0u8; 32];
        r.exact(&mut digest)?;
        let seed = r.u64()?;
        Ok((r, seed))
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::io(self.path, e))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str, path: &Path) -> Result<T> {
    field
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("{}: malformed {what}", path.display())))
}
