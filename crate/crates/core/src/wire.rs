//! Little-endian binary framing shared by the dataset and checkpoint files.
//!
//! Every file is `magic[4] | version u32 | payload_len u64 | payload | crc32`,
//! where the CRC32 covers all bytes before it.

use crate::error::FormatError;
use crate::numeric::Matrix;

const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
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

    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Length-prefixed (u32) vector of f64.
    pub fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }

    /// `rows u32 | cols u32 | values`.
    pub fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.as_slice() {
            self.f64(v);
        }
    }

    pub fn seal(self, magic: [u8; 4], version: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.buf.len() + 4);
        out.extend_from_slice(&magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.buf.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.buf);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

/// Validates the frame and returns a reader over the payload.
pub(crate) fn open(bytes: &[u8], magic: [u8; 4], version: u32) -> Result<Reader<'_>, FormatError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FormatError::Truncated(format!(
            "{} bytes is shorter than the {}-byte frame",
            bytes.len(),
            HEADER_LEN + 4
        )));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(FormatError::BadMagic { expected: magic, found });
    }
    let found_version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found_version != version {
        return Err(FormatError::Version {
            found: found_version,
            supported: version,
        });
    }
    let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected_len = (HEADER_LEN as u64).saturating_add(declared).saturating_add(4);
    if (bytes.len() as u64) < expected_len {
        return Err(FormatError::Truncated(format!(
            "header declares {declared} payload bytes, file holds {}",
            bytes.len() - HEADER_LEN - 4
        )));
    }
    if (bytes.len() as u64) > expected_len {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() as u64 - expected_len
        )));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(Reader {
        buf: &bytes[HEADER_LEN..body_end],
        pos: 0,
    })
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated(format!("payload ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn u128(&mut self, what: &str) -> Result<u128, FormatError> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn str(&mut self, what: &str) -> Result<String, FormatError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Malformed(format!("{what}: invalid utf-8")))
    }

    pub fn f64s(&mut self, what: &str) -> Result<Vec<f64>, FormatError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(
            n.checked_mul(8).ok_or_else(|| FormatError::Malformed(what.into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn matrix(&mut self, what: &str) -> Result<Matrix, FormatError> {
        let rows = self.u32(what)? as usize;
        let cols = self.u32(what)? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| FormatError::Malformed(format!("{what}: dims overflow")))?;
        let bytes = self.take(n, what)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data).map_err(|e| FormatError::Malformed(format!("{what}: {e}")))
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Malformed(format!(
                "{} unread payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
