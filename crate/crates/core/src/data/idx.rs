//! IDX reader/writer (big-endian headers). Gzip-compressed files are
//! detected by their magic bytes and decompressed transparently.
//!
//! Image files use magic `0x00000803` (unsigned bytes, scaled by 1/255) or
//! `0x00000E03` (big-endian doubles, stored as-is); label files use
//! `0x00000801`.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::array::Array;
use crate::data::Dataset;
use crate::error::{Error, Result};

pub const MAGIC_IMAGES_U8: u32 = 0x0000_0803;
pub const MAGIC_IMAGES_F64: u32 = 0x0000_0E03;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::Format {
            offset: 0,
            detail: format!("{}: bad gzip stream: {e}", path.display()),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format { offset: offset as u64, detail: "truncated header".into() })
}

/// Parses an IDX image file into `(n, h, w, pixels in [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != MAGIC_IMAGES_U8 && magic != MAGIC_IMAGES_F64 {
        return Err(Error::Format { offset: 0, detail: format!("bad image magic 0x{magic:08X}") });
    }
    let n = be_u32(bytes, 4)? as usize;
    let h = be_u32(bytes, 8)? as usize;
    let w = be_u32(bytes, 12)? as usize;
    let count = n * h * w;
    let body = &bytes[16..];
    let pixels = if magic == MAGIC_IMAGES_U8 {
        if body.len() < count {
            return Err(Error::Format {
                offset: (16 + body.len()) as u64,
                detail: format!("truncated pixel data: {count} bytes expected"),
            });
        }
        body[..count].iter().map(|&b| f64::from(b) / 255.0).collect()
    } else {
        if body.len() < count * 8 {
            return Err(Error::Format {
                offset: (16 + body.len()) as u64,
                detail: format!("truncated pixel data: {} bytes expected", count * 8),
            });
        }
        body[..count * 8].chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect()
    };
    Ok((n, h, w, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != MAGIC_LABELS {
        return Err(Error::Format { offset: 0, detail: format!("bad label magic 0x{magic:08X}") });
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format { offset: (8 + body.len()) as u64, detail: format!("truncated labels: {n} expected") });
    }
    Ok(body[..n].to_vec())
}

/// Loads an image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, h, w, pixels) = parse_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_labels(&read_maybe_gz(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            detail: format!("{} labels for {n} images", labels.len()),
        });
    }
    let images = Array::new(vec![n, 1, h, w], pixels)?;
    let mut ids = labels.clone();
    ids.sort_unstable();
    ids.dedup();
    let compact = labels.iter().map(|l| ids.binary_search(l).expect("present")).collect();
    let mut ds = Dataset::new(
        images,
        Some(compact),
        "idx",
        format!("{} + {}", images_path.display(), labels_path.display()),
    )?;
    ds.class_names = ids.iter().map(|l| l.to_string()).collect();
    Ok(ds)
}

/// Writes images as big-endian doubles (magic `0x00000E03`).
pub fn write_idx_images(path: &Path, images: &Array) -> Result<()> {
    let [n, _, h, w] = images.shape()[..] else {
        return Err(Error::config("images must be N x 1 x H x W"));
    };
    let mut out = Vec::with_capacity(16 + images.len() * 8);
    for v in [MAGIC_IMAGES_F64, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for v in images.data() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::config(format!("label {l} does not fit in a byte")))?;
        out.push(b);
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u8_images(n: u32, h: u32, w: u32, px: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [MAGIC_IMAGES_U8, n, h, w] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(px);
        b
    }

    fn labels(l: &[u8]) -> Vec<u8> {
        let mut b = MAGIC_LABELS.to_be_bytes().to_vec();
        b.extend_from_slice(&(l.len() as u32).to_be_bytes());
        b.extend_from_slice(l);
        b
    }

    #[test]
    fn two_image_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<u8> = vec![0, 255, 51, 102, 10, 20, 30, 40];
        fs::write(dir.path().join("img"), u8_images(2, 2, 2, &px)).unwrap();
        fs::write(dir.path().join("lab"), labels(&[3, 1])).unwrap();
        let ds = load_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
        let want: Vec<f64> = px.iter().map(|&b| f64::from(b) / 255.0).collect();
        assert_eq!(ds.images.data(), &want[..]);
        assert_eq!(ds.labels, Some(vec![1, 0]));
        assert_eq!(ds.class_names, vec!["1", "3"]);
    }

    #[test]
    fn wrong_label_magic_is_named() {
        let mut b = labels(&[1]);
        b[3] = 0x03;
        let err = parse_labels(&b).unwrap_err();
        assert!(err.to_string().contains("0x00000803"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let b = u8_images(2, 2, 2, &[1, 2, 3]);
        match parse_images(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("{other:?}"),
        }
        assert!(parse_images(&[0, 0]).is_err());
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("img"), u8_images(2, 1, 1, &[1, 2])).unwrap();
        fs::write(dir.path().join("lab"), labels(&[0, 1, 1])).unwrap();
        assert!(matches!(
            load_idx(&dir.path().join("img"), &dir.path().join("lab")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn double_images_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let images = Array::new(vec![2, 1, 1, 3], vec![0.0, 0.1, 1.0 / 3.0, 0.5, 0.9, 1.0]).unwrap();
        write_idx_images(&dir.path().join("img"), &images).unwrap();
        write_idx_labels(&dir.path().join("lab"), &[0, 1]).unwrap();
        let ds = load_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
        assert_eq!(ds.images, images);
    }
}
