//! Netpbm decoding (P2/P3/P5/P6) and PGM writing.
//!
//! Grayscale inputs are replicated to three channels so every decoded file
//! yields an [`RgbImage`]. Sample values are kept as-is (no maxval
//! rescaling) and cast to floating point.

use std::fs;
use std::path::Path;

use crate::data::image::RgbImage;
use crate::error::{Error, Result};
use crate::lbp::GrayImage;

/// Reads an image file, dispatching on its magic bytes. Netpbm formats are
/// decoded natively; PNG requires the optional `png` cargo feature.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    if bytes.is_empty() {
        return Err(Error::io(
            path.to_path_buf(),
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "zero-byte file"),
        ));
    }
    match bytes.first() {
        Some(b'P') => decode_netpbm(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
        Some(0x89) if bytes.get(1..4) == Some(b"PNG") => decode_png(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
        _ => Err(Error::Format(format!(
            "{}: unsupported image format (expected netpbm or PNG)",
            path.display()
        ))),
    }
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG decode failed: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| v as f64).collect();
    RgbImage::new(h, w, data)
}

#[cfg(not(feature = "png"))]
fn decode_png(_bytes: &[u8]) -> Result<RgbImage> {
    Err(Error::Format(
        "PNG support is not built in; enable the `png` cargo feature".into(),
    ))
}

/// Pull-based tokenizer over the netpbm header: whitespace-separated decimal
/// tokens with `#` comments running to end of line.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("invalid netpbm number {:?}", tok)))
    }
}

/// Decodes P2/P3 (ASCII) and P5/P6 (binary) rasters with maxval up to 255.
pub fn decode_netpbm(bytes: &[u8]) -> Result<RgbImage> {
    let mut header = HeaderReader::new(bytes);
    let magic = header.token()?;
    let (binary, channels) = match magic {
        b"P2" => (false, 1),
        b"P3" => (false, 3),
        b"P5" => (true, 1),
        b"P6" => (true, 3),
        other => {
            return Err(Error::Format(format!(
                "unsupported netpbm magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = header.number()?;
    let height = header.number()?;
    let maxval = header.number()?;
    if width == 0 || height == 0 {
        return Err(Error::Format("netpbm extents must be positive".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "unsupported netpbm maxval {maxval} (1..=255)"
        )));
    }

    let count = width * height * channels;
    let samples: Vec<f64> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let raster_start = header.pos + 1;
        if raster_start + count > bytes.len() {
            return Err(Error::Format(format!(
                "binary raster truncated: need {count} bytes, have {}",
                bytes.len().saturating_sub(raster_start)
            )));
        }
        bytes[raster_start..raster_start + count].iter().map(|&b| b as f64).collect()
    } else {
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            samples.push(header.number().map_err(|_| {
                Error::Format(format!(
                    "ASCII raster truncated: expected {count} samples, got {}",
                    samples.len()
                ))
            })? as f64);
        }
        samples
    };
    if samples.iter().any(|&v| v > maxval as f64) {
        return Err(Error::Format("netpbm sample exceeds maxval".into()));
    }

    let data = match channels {
        3 => samples,
        _ => {
            let mut rgb = Vec::with_capacity(count * 3);
            for v in samples {
                rgb.extend_from_slice(&[v, v, v]);
            }
            rgb
        }
    };
    RgbImage::new(height, width, data)
}

/// Writes a grayscale raster as binary PGM (P5, maxval 255). Values are
/// rounded to the nearest integer and clamped to [0, 255].
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_replicates_gray_to_rgb() {
        let img = decode_netpbm(b"P2\n2 2\n255\n0 64 128 255").unwrap();
        assert_eq!((img.height(), img.width()), (2, 2));
        assert_eq!(img.at(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(img.at(0, 1), [64.0, 64.0, 64.0]);
        assert_eq!(img.at(1, 0), [128.0, 128.0, 128.0]);
        assert_eq!(img.at(1, 1), [255.0, 255.0, 255.0]);
    }

    #[test]
    fn binary_ppm_single_pixel() {
        let img = decode_netpbm(b"P6\n1 1\n255\n\x0a\x14\x1e").unwrap();
        assert_eq!((img.height(), img.width()), (1, 1));
        assert_eq!(img.at(0, 0), [10.0, 20.0, 30.0]);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let img = decode_netpbm(b"P2 # magic\n# a comment line\n2 1 # extents\n255\n7 9").unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
        assert_eq!(img.at(0, 0), [7.0, 7.0, 7.0]);
        assert_eq!(img.at(0, 1), [9.0, 9.0, 9.0]);
    }

    #[test]
    fn truncated_rasters_are_format_errors() {
        assert!(decode_netpbm(b"P2\n2 2\n255\n0 64 128").is_err());
        assert!(decode_netpbm(b"P6\n2 2\n255\nxy").is_err());
        assert!(decode_netpbm(b"P5\n2 2\n").is_err());
    }

    #[test]
    fn zero_byte_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.pgm");
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = GrayImage::new(2, 3, vec![0.0, 10.4, 10.6, 128.0, 254.9, 300.0]).unwrap();
        write_pgm(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        let expected = [0.0, 10.0, 11.0, 128.0, 255.0, 255.0];
        for (i, &e) in expected.iter().enumerate() {
            assert_eq!(back.at(i / 3, i % 3), [e, e, e]);
        }
    }
}
