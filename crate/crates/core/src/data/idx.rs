//! IDX container used by the MNIST distribution.
//!
//! Layout: two zero bytes, a dtype byte (only `0x08`, unsigned byte, is
//! supported), a rank byte, `rank` big-endian `u32` dimensions, then the raw
//! row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const DTYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        (u32::from(DTYPE_U8) << 8) | self.dims.len() as u32
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Length {
            needed: 4,
            found: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "IDX magic must start with two zero bytes, got {:02x}{:02x}",
            bytes[0], bytes[1]
        )));
    }
    if bytes[2] != DTYPE_U8 {
        return Err(Error::Format(format!("unsupported IDX dtype {:#04x}", bytes[2])));
    }
    let rank = usize::from(bytes[3]);
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Length {
            needed: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let needed = header + count;
    if bytes.len() < needed {
        return Err(Error::Length {
            needed,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..needed].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Images (`N × rows × cols` bytes) with their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistSet {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.pixels();
        &self.images[i * n..(i + 1) * n]
    }

    /// Pixel values rescaled to `[0, 1]`.
    pub fn image_f64(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.images.truncate(n * self.pixels());
    }
}

fn expect_magic(array: &IdxArray, want: u32, what: &str) -> Result<()> {
    if array.magic() != want {
        return Err(Error::Format(format!(
            "{what}: expected magic {want:#010x}, found {:#010x}",
            array.magic()
        )));
    }
    Ok(())
}

pub fn decode_mnist(images: &[u8], labels: &[u8]) -> Result<MnistSet> {
    let img = parse_idx(images)?;
    expect_magic(&img, IMAGES_MAGIC, "images file")?;
    let lab = parse_idx(labels)?;
    expect_magic(&lab, LABELS_MAGIC, "labels file")?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    Ok(MnistSet {
        rows: img.dims[1],
        cols: img.dims[2],
        images: img.data,
        labels: lab.data,
    })
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<MnistSet> {
    let read = |p: &Path| {
        fs::read(p).map_err(|e| Error::MissingData(format!("{}: {e}", p.display())))
    };
    decode_mnist(&read(images_path.as_ref())?, &read(labels_path.as_ref())?)
}
