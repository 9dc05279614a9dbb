//! MNIST-style IDX ubyte files: big-endian `u32` magic, big-endian `u32`
//! dimensions, then raw bytes. Images use magic `0x00000803`, labels `0x00000801`.

use super::Dataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::io::read_bytes;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse_at_byte(
                self.bytes.len(),
                format!(
                    "{} file truncated: needed {n} bytes at offset {}, {} available",
                    self.what,
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse_at_byte(
                self.pos,
                format!(
                    "{} file has {} trailing bytes",
                    self.what,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        Ok(())
    }
}

fn expect_magic(c: &mut Cursor<'_>, want: u32) -> Result<()> {
    let got = c.u32_be()?;
    if got == want {
        return Ok(());
    }
    let [z0, z1, dtype, ndim] = got.to_be_bytes();
    let (offset, reason) = if z0 != 0 || z1 != 0 {
        (0, format!("bad magic 0x{got:08x}, expected 0x{want:08x}"))
    } else if dtype != 0x08 {
        (2, format!("unsupported dtype 0x{dtype:02x}, only unsigned bytes (0x08)"))
    } else {
        (3, format!("{ndim} dimensions, expected {}", want & 0xff))
    };
    Err(Error::parse_at_byte(offset, format!("{} file: {reason}", c.what)))
}

/// Parses in-memory image and label files; pixels are scaled by 1/255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut ic = Cursor { bytes: images, pos: 0, what: "images" };
    expect_magic(&mut ic, IMAGES_MAGIC)?;
    let n = ic.u32_be()? as usize;
    let rows = ic.u32_be()? as usize;
    let cols = ic.u32_be()? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::parse_at_byte(4, format!("images file: zero dimension {n}x{rows}x{cols}")));
    }

    let mut lc = Cursor { bytes: labels, pos: 0, what: "labels" };
    expect_magic(&mut lc, LABELS_MAGIC)?;
    let ln = lc.u32_be()? as usize;
    if ln != n {
        return Err(Error::parse_at_byte(4, format!("labels file holds {ln} items, images file {n}")));
    }

    let d = rows * cols;
    let pixels = ic.take(n * d)?;
    ic.finish()?;
    let raw_labels = lc.take(n)?;
    lc.finish()?;

    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().copied().max().unwrap_or(0).max(1) + 1;
    Dataset::new(Tensor::new(vec![n, d], features)?, labels, k)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    parse_idx(&read_bytes(images)?, &read_bytes(labels)?)
}
