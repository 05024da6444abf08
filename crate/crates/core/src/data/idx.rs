//! IDX container files (the MNIST distribution format), bit-exact.
//!
//! Layout: big-endian u32 magic (0x00000803 for ubyte images with 3
//! dimensions, 0x00000801 for ubyte labels with 1 dimension), one big-endian
//! u32 per dimension, then the raw byte payload. Readers reject any deviation
//! with the byte offset; trailing bytes after the payload are an error.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// count * height * width pixels scaled to [0, 1] by dividing by 255.
    pub pixels: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        if self.bytes.len() < self.offset + 4 {
            return Err(self.fail(format!(
                "file truncated while reading {what} ({} bytes total)",
                self.bytes.len()
            )));
        }
        let v = u32::from_be_bytes(
            self.bytes[self.offset..self.offset + 4]
                .try_into()
                .expect("4 bytes"),
        );
        self.offset += 4;
        Ok(v)
    }

    fn read_payload(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.offset + n {
            return Err(self.fail(format!(
                "payload truncated: need {n} bytes, file holds {}",
                self.bytes.len() - self.offset
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn expect_eof(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.fail(format!(
                "{} trailing bytes after the declared payload",
                self.bytes.len() - self.offset
            )));
        }
        Ok(())
    }
}

fn check_magic(cur: &mut Cursor, expected: u32) -> Result<()> {
    let start = cur.offset;
    let found = cur.read_u32("magic")?;
    if found != expected {
        cur.offset = start;
        return Err(cur.fail(format!(
            "bad magic: expected {expected:#010x}, found {found:#010x}"
        )));
    }
    Ok(())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };
    check_magic(&mut cur, IMAGES_MAGIC)?;
    let count = cur.read_u32("image count")? as usize;
    let height = cur.read_u32("row count")? as usize;
    let width = cur.read_u32("column count")? as usize;
    let n = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| cur.fail("dimension product overflows"))?;
    let payload = cur.read_payload(n)?;
    cur.expect_eof()?;
    let pixels = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(IdxImages { count, height, width, pixels })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };
    check_magic(&mut cur, LABELS_MAGIC)?;
    let count = cur.read_u32("label count")? as usize;
    let payload = cur.read_payload(count)?;
    cur.expect_eof()?;
    if let Some((i, &bad)) = payload.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::Data(format!(
            "{}: label {bad} at record {i} out of range 0..=9",
            path.display()
        )));
    }
    Ok(payload.to_vec())
}

/// Write pixels (each in [0, 1]) as an IDX image file, quantizing each value
/// to `round(255 x)`.
pub fn write_idx_images(
    path: &Path,
    count: usize,
    height: usize,
    width: usize,
    pixels: &[f64],
) -> Result<()> {
    let n = count * height * width;
    if pixels.len() != n {
        return Err(Error::Shape(format!(
            "write_idx_images: {} pixels for {count}x{height}x{width}",
            pixels.len()
        )));
    }
    for (c, v) in [(count, "count"), (height, "height"), (width, "width")] {
        if c > u32::MAX as usize {
            return Err(Error::Data(format!("{v} {c} exceeds the u32 IDX limit")));
        }
    }
    let mut out = Vec::with_capacity(16 + n);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(height as u32).to_be_bytes());
    out.extend_from_slice(&(width as u32).to_be_bytes());
    for (i, &p) in pixels.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Data(format!("pixel {i} is {p}, outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    if labels.len() > u32::MAX as usize {
        return Err(Error::Data(format!(
            "label count {} exceeds the u32 IDX limit",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("label {bad} out of range 0..=9")));
    }
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

// ----------------------------------------------------------------------------
