//! Grayscale image buffers and binary PGM (P5) input/output.
//!
//! `GrayImage` is the 8-bit camera/raster type; `FloatImage` carries signed
//! filter responses at f64 so a zero-mean kernel can actually go negative.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Row-major 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Image(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    /// Bilinear sample at fractional pixel coordinates; `None` outside the
    /// image or outside the clamp rectangle `(x0, y0, x1, y1)` (half-open).
    pub fn sample_bilinear(
        &self,
        x: f64,
        y: f64,
        bounds: (usize, usize, usize, usize),
    ) -> Option<f64> {
        let (bx0, by0, bx1, by1) = bounds;
        if !(x.is_finite() && y.is_finite()) || x < bx0 as f64 || y < by0 as f64 {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let x1 = x0 as usize + 1;
        let y1 = y0 as usize + 1;
        if x1 >= bx1 || y1 >= by1 {
            return None;
        }
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        Some(p00 * (1.0 - fx) * (1.0 - fy) + p10 * fx * (1.0 - fy) + p01 * (1.0 - fx) * fy + p11 * fx * fy)
    }

    /// Writes binary PGM (P5), maxval 255.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.data)?;
        Ok(())
    }

    /// Reads binary PGM (P5). Tolerates `#` comments in the header; rejects
    /// other magics, maxval != 255 and truncated payloads.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        Self::parse_pgm(&raw)
    }

    pub fn parse_pgm(raw: &[u8]) -> Result<Self> {
        let mut pos = 0usize;

        let mut next_token = |raw: &[u8]| -> Result<String> {
            // Skip whitespace and # comments.
            loop {
                while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < raw.len() && raw[pos] == b'#' {
                    while pos < raw.len() && raw[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
        };

        let magic = next_token(raw)?;
        if magic != "P5" {
            return Err(Error::Image(format!("unsupported magic {magic:?}, want P5")));
        }
        let width: usize = next_token(raw)?
            .parse()
            .map_err(|_| Error::Image("bad width".into()))?;
        let height: usize = next_token(raw)?
            .parse()
            .map_err(|_| Error::Image("bad height".into()))?;
        let maxval: usize = next_token(raw)?
            .parse()
            .map_err(|_| Error::Image("bad maxval".into()))?;
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported maxval {maxval}")));
        }
        // Exactly one whitespace byte separates header and payload.
        pos += 1;
        let need = width
            .checked_mul(height)
            .ok_or_else(|| Error::Image("image dimensions overflow".into()))?;
        if raw.len() < pos || raw.len() - pos < need {
            return Err(Error::Image(format!(
                "payload truncated: need {need} bytes, have {}",
                raw.len().saturating_sub(pos)
            )));
        }
        GrayImage::from_vec(width, height, raw[pos..pos + need].to_vec())
    }
}

/// Row-major f64 image for filter responses and other signed intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> Self {
        FloatImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Image(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(FloatImage {
            width,
            height,
            data,
        })
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        FloatImage {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&p| p as f64).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let mut img = GrayImage::new(37, 21);
        for (i, px) in img.data.iter_mut().enumerate() {
            *px = (i * 7 % 256) as u8;
        }
        img.write_pgm(&path).unwrap();
        let back = GrayImage::read_pgm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut raw = b"P5\n# produced by a tool\n4 2\n# more\n255\n".to_vec();
        raw.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let img = GrayImage::parse_pgm(&raw).unwrap();
        assert_eq!(img.width(), 4);
        assert_eq!(img.height(), 2);
        assert_eq!(img.get(3, 1), 8);
    }

    #[test]
    fn pgm_rejects_corruption() {
        assert!(GrayImage::parse_pgm(b"P6\n2 2\n255\nxxxx").is_err());
        assert!(GrayImage::parse_pgm(b"P5\n2 2\n255\nxx").is_err()); // short payload
        assert!(GrayImage::parse_pgm(b"P5\n2 2\n65535\nxxxx").is_err());
        assert!(GrayImage::parse_pgm(b"P5\n2\n").is_err());
    }

    #[test]
    fn bilinear_interpolates_and_respects_bounds() {
        let img = GrayImage::from_vec(2, 2, vec![0, 100, 100, 200]).unwrap();
        let b = (0, 0, 2, 2);
        assert_eq!(img.sample_bilinear(0.0, 0.0, b), Some(0.0));
        assert_eq!(img.sample_bilinear(0.5, 0.5, b), Some(100.0));
        assert_eq!(img.sample_bilinear(1.5, 0.5, b), None); // needs x=2 neighbor
        assert_eq!(img.sample_bilinear(-0.1, 0.0, b), None);
    }
}
