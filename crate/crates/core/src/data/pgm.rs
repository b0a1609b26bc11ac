//! Binary PGM (P5) images and per-class image directories.

use std::fs;
use std::path::Path;

use crate::array::Array;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// An 8-bit grayscale image with pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// Parses a P5 file. Header tokens may be separated by whitespace and
/// `#` comments; a single whitespace byte precedes the raster.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format { offset: pos as u64, detail: "truncated PGM header".into() }),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    if magic != "P5" {
        return Err(Error::Format { offset: 0, detail: format!("not a binary PGM (magic {magic:?})") });
    }
    let mut num = |name: &str| -> Result<usize> {
        let t = token(bytes)?;
        t.parse().map_err(|_| Error::Format { offset: 0, detail: format!("bad PGM {name} {t:?}") })
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format { offset: 0, detail: format!("unsupported PGM maxval {maxval}") });
    }
    let start = pos + 1;
    let count = width * height;
    let raster = bytes.get(start..start + count).ok_or_else(|| Error::Format {
        offset: bytes.len() as u64,
        detail: format!("truncated PGM raster: {count} bytes expected"),
    })?;
    let scale = maxval as f64;
    let pixels = raster.iter().map(|&b| (f64::from(b) / scale).min(1.0)).collect();
    Ok(GrayImage { height, width, pixels })
}

pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[f64]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}

/// Weights of source cells `[0, src)` covered by each of `dst` equal-width
/// output cells; each row sums to one.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * step, (o + 1) as f64 * step);
            let mut w = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((s, overlap / step));
                }
                s += 1;
            }
            w
        })
        .collect()
}

/// Area-averaging (box filter) resize.
pub fn box_downsample(img: &GrayImage, target_hw: (usize, usize)) -> Result<GrayImage> {
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 || th > img.height || tw > img.width {
        return Err(Error::config(format!(
            "cannot box-filter {}x{} to {th}x{tw}",
            img.height, img.width
        )));
    }
    let rows = box_weights(img.height, th);
    let cols = box_weights(img.width, tw);
    let mut tmp = vec![0.0; th * img.width];
    for (o, weights) in rows.iter().enumerate() {
        for &(r, wt) in weights {
            for c in 0..img.width {
                tmp[o * img.width + c] += wt * img.pixels[r * img.width + c];
            }
        }
    }
    let mut out = vec![0.0; th * tw];
    for r in 0..th {
        for (o, weights) in cols.iter().enumerate() {
            out[r * tw + o] = weights.iter().map(|&(c, wt)| wt * tmp[r * img.width + c]).sum::<f64>().clamp(0.0, 1.0);
        }
    }
    Ok(GrayImage { height: th, width: tw, pixels: out })
}

/// Loads `root/<class>/<image>.pgm`, one class per subdirectory (sorted by
/// name), resizing every image to `target_hw`. Files that are not PGM are
/// skipped with a warning.
pub fn load_image_dir(root: &Path, target_hw: (usize, usize)) -> Result<Dataset> {
    let mut classes: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::contract(format!("{} has no class subdirectories", root.display())));
    }
    let (th, tw) = target_hw;
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for class_dir in &classes {
        let name = class_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut files: Vec<_> = fs::read_dir(class_dir)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
        files.sort();
        let before = raw_labels.len();
        for f in files {
            let bytes = fs::read(&f)?;
            let img = match parse_pgm(&bytes) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", f.display());
                    continue;
                }
            };
            let small = box_downsample(&img, target_hw)?;
            data.extend(small.pixels);
            raw_labels.push(name.clone());
        }
        if raw_labels.len() == before {
            return Err(Error::contract(format!("class directory {} has no PGM images", class_dir.display())));
        }
    }
    let images = Array::new(vec![raw_labels.len(), 1, th, tw], data)?;
    Dataset::with_raw_labels(images, &raw_labels, "image-dir", format!("{} resized to {th}x{tw}", root.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_averages_to_half() {
        let pixels = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        let img = GrayImage { height: 4, width: 4, pixels };
        let out = box_downsample(&img, (2, 2)).unwrap();
        assert_eq!(out.pixels, vec![0.5; 4]);
    }

    #[test]
    fn constant_image_stays_constant_at_any_ratio() {
        let img = GrayImage { height: 192, width: 168, pixels: vec![0.3; 192 * 168] };
        let out = box_downsample(&img, (48, 42)).unwrap();
        assert_eq!((out.height, out.width), (48, 42));
        assert!(out.pixels.iter().all(|v| (v - 0.3).abs() < 1e-12));
        let odd = box_downsample(&img, (50, 41)).unwrap();
        assert!(odd.pixels.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn header_with_comments() {
        let mut b = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        b.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        let img = parse_pgm(&b).unwrap();
        assert_eq!((img.height, img.width), (2, 3));
        assert_eq!(img.pixels[5], 1.0);
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn directory_loader() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("b", 0.2), ("a", 0.8)] {
            let d = dir.path().join(class);
            fs::create_dir(&d).unwrap();
            for i in 0..2 {
                write_pgm(&d.join(format!("{i}.pgm")), 8, 6, &vec![value; 48]).unwrap();
            }
            fs::write(d.join("notes.txt"), "not an image").unwrap();
        }
        let ds = load_image_dir(dir.path(), (4, 3)).unwrap();
        assert_eq!(ds.images.shape(), &[4, 1, 4, 3]);
        assert_eq!(ds.labels, Some(vec![0, 0, 1, 1]));
        assert_eq!(ds.class_names, vec!["a", "b"]);
        assert!((ds.images.data()[0] - 204.0 / 255.0).abs() < 1e-12);

        fs::create_dir(dir.path().join("c")).unwrap();
        assert!(matches!(load_image_dir(dir.path(), (4, 3)), Err(Error::Contract(_))));
    }
}
