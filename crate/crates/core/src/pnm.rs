//! Netpbm image IO: binary/ASCII graymaps (P5/P2) and binary pixmaps (P6).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

/// A decoded Netpbm image.
#[derive(Clone, Debug, PartialEq)]
pub enum Pnm {
    Gray(GrayImage),
    Rgb(RgbImage),
}

/// 8-bit quantization used for every written graymap.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes as binary P5 with maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("netpbm: expected {what} at byte {start}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Format("netpbm: missing magic number".into()));
    }
    let kind = bytes[1];
    if !matches!(kind, b'2' | b'5' | b'6') {
        return Err(Error::Format(format!("netpbm: unsupported type P{}", kind as char)));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("netpbm: bad header {width}x{height} maxval {maxval}")));
    }
    let channels = if kind == b'6' { 3 } else { 1 };
    let count = width * height * channels;
    let scale = maxval as f64;
    let samples: Vec<f64> = if kind == b'2' {
        (0..count).map(|_| cur.number("sample").map(|v| v as f64 / scale)).collect::<Result<_>>()?
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        let start = cur.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let raster = bytes
            .get(start..start + need)
            .ok_or_else(|| Error::Format(format!("netpbm: raster truncated, need {need} bytes")))?;
        if wide {
            raster.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / scale).collect()
        } else {
            raster.iter().map(|&b| b as f64 / scale).collect()
        }
    };
    if samples.iter().any(|&v| v > 1.0) {
        return Err(Error::Format("netpbm: sample exceeds maxval".into()));
    }
    Ok(if channels == 3 {
        Pnm::Rgb(RgbImage::from_vec(height, width, 3, samples)?)
    } else {
        Pnm::Gray(GrayImage::from_vec(height, width, samples)?)
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<Pnm> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads a graymap, converting pixmaps to luma.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    Ok(match read(path)? {
        Pnm::Gray(g) => g,
        Pnm::Rgb(c) => crate::datagen::grayscale(&c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantized() {
        let img = GrayImage::from_fn(3, 5, |y, x| (y * 5 + x) as f64 / 14.0);
        let back = match decode(&encode_pgm(&img)).unwrap() {
            Pnm::Gray(g) => g,
            _ => unreachable!(),
        };
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(quantize(*a) as f64 / 255.0, *b);
        }
        assert_eq!(encode_pgm(&back), encode_pgm(&img));
    }

    #[test]
    fn ascii_with_comments_and_pixmap() {
        let p2 = b"P2\n# c\n2 1\n# more\n4\n0 4\n";
        assert_eq!(decode(p2).unwrap(), Pnm::Gray(GrayImage::from_vec(1, 2, vec![0.0, 1.0]).unwrap()));
        let mut p6 = b"P6 1 1 255\n".to_vec();
        p6.extend([255, 0, 0]);
        match decode(&p6).unwrap() {
            Pnm::Rgb(c) => assert_eq!(c.data, vec![1.0, 0.0, 0.0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn sixteen_bit() {
        let mut p5 = b"P5 2 1 65535\n".to_vec();
        p5.extend([0xff, 0xff, 0x00, 0x00]);
        assert_eq!(decode(&p5).unwrap(), Pnm::Gray(GrayImage::from_vec(1, 2, vec![1.0, 0.0]).unwrap()));
    }

    #[test]
    fn malformed() {
        assert!(matches!(decode(b"P5 2 2 255\n\x00"), Err(Error::Format(_))));
        assert!(matches!(decode(b"P4 1 1\n"), Err(Error::Format(_))));
        assert!(matches!(decode(b"hello"), Err(Error::Format(_))));
        assert!(matches!(decode(b"P2 1 1 3\n9\n"), Err(Error::Format(_))));
    }
}
