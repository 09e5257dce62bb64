//! Big-endian IDX containers, optionally gzip-compressed.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX payload with its dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Decodes an in-memory IDX buffer whose magic must equal `expected`.
pub fn parse_idx(bytes: &[u8], expected: u32) -> Result<IdxArray> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| format_err(bytes.len(), format!("header truncated, needed 4 bytes at {at}")))
    };
    let magic = word(0)?;
    if magic != expected {
        return Err(format_err(0, format!("magic {magic:#010x}, expected {expected:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| word(4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    if bytes.len() < start + len {
        return Err(format_err(
            bytes.len(),
            format!("payload truncated: {} of {len} bytes present", bytes.len() - start),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[start..start + len].to_vec(),
    })
}

pub fn load_idx(path: impl AsRef<Path>, expected: u32) -> Result<IdxArray> {
    parse_idx(&read_bytes(path.as_ref())?, expected)
}

/// Images as `(n, rows, cols)` bytes and labels as `n` bytes.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(IdxArray, IdxArray)> {
    let img = load_idx(images, IMAGES_MAGIC)?;
    let lab = load_idx(labels, LABELS_MAGIC)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(format_err(
            0,
            format!("image dims {:?} and label dims {:?} disagree", img.dims, lab.dims),
        ));
    }
    Ok((img, lab))
}

/// Serializes bytes as IDX; used for fixtures.
pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let data: Vec<u8> = (0..4 * 28 * 28).map(|i| (i % 251) as u8).collect();
        encode_idx(IMAGES_MAGIC, &[4, 28, 28], &data)
    }

    #[test]
    fn parses_four_image_fixture() {
        let a = parse_idx(&fixture(), IMAGES_MAGIC).unwrap();
        assert_eq!(a.dims, vec![4, 28, 28]);
        assert_eq!(a.data.len(), 4 * 784);
        assert_eq!(a.data[300], (300 % 251) as u8);
    }

    #[test]
    fn wrong_magic_is_a_format_error_at_zero() {
        match parse_idx(&fixture(), LABELS_MAGIC) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_the_end_offset() {
        let bytes = fixture();
        let cut = &bytes[..bytes.len() - 10];
        match parse_idx(cut, IMAGES_MAGIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("{other:?}"),
        }
        match parse_idx(&bytes[..6], IMAGES_MAGIC) {
            Err(Error::Format { offset: 6, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
