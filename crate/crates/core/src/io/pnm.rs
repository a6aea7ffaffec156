//! Binary netpbm images: `P5` graymaps and `P6` pixmaps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { format: "PNM", msg: msg.into() })
}

/// An 8-bit graymap in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Graymap {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return format_err(format!("{}×{} graymap needs {} pixels, got {}", width, height, width * height, pixels.len()));
        }
        Ok(Graymap { width, height, pixels })
    }
}

/// A decoded P5 or P6 image. Samples are interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn encode_pgm(map: &Graymap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&map.pixels);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
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
            .ok_or_else(|| Error::Format { format: "PNM", msg: format!("expected {what} at byte {start}") })
    }
}

/// Parses a binary P5 or P6 image with `maxval` up to 65535.
pub fn decode_pnm(bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return format_err("expected magic P5 or P6"),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return format_err(format!("maxval {maxval} outside 1..=65535"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return format_err("missing whitespace after maxval"),
    }
    let wide = maxval > 255;
    let count = width * height * channels;
    let body = &bytes[h.pos..];
    let need = if wide { 2 * count } else { count };
    if body.len() < need {
        return format_err(format!("{width}×{height} image needs {need} data bytes, found {}", body.len()));
    }
    let samples: Vec<u16> = if wide {
        body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(&s) = samples.iter().find(|&&s| s as usize > maxval) {
        return format_err(format!("sample {s} exceeds maxval {maxval}"));
    }
    Ok(Pnm { width, height, channels, maxval: maxval as u16, samples })
}

pub fn write_pgm(path: impl AsRef<Path>, map: &Graymap) -> Result<()> {
    super::write_file(path.as_ref(), &encode_pgm(map))
}

/// Reads an 8-bit P5 graymap.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Graymap> {
    let img = decode_pnm(&super::read_file(path.as_ref())?)?;
    if img.channels != 1 || img.maxval != 255 {
        return format_err(format!("expected an 8-bit P5 graymap, got {} channel(s) with maxval {}", img.channels, img.maxval));
    }
    Graymap::new(img.width, img.height, img.samples.into_iter().map(|s| s as u8).collect())
}

/// Reads a P5 or P6 file as a `(1, 3, h, w)` tensor scaled to `[0, 1]`.
/// Graymaps are replicated across the three channels.
pub fn read_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let img = decode_pnm(&super::read_file(path.as_ref())?)?;
    let scale = 1.0 / img.maxval as f64;
    let (w, ch) = (img.width, img.channels);
    Ok(Tensor::from_fn((1, 3, img.height, w), |_, c, y, x| {
        let s = img.samples[(y * w + x) * ch + c.min(ch - 1)];
        T::from_f64_lossy(s as f64 * scale)
    }))
}

/// How a map was scaled into 8 bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
    /// Every value was equal; the map was written as all zeros.
    pub constant: bool,
}

/// Min–max scales channel 0 of batch item `n` to `0..=255`. A constant map becomes all zeros.
pub fn normalize_map<T: Scalar>(map: &Tensor<T>, n: usize) -> Result<(Graymap, Normalization)> {
    let s = map.shape();
    if n >= s.n() || s.c() == 0 {
        return crate::error::shape_err("normalize_map", format!("no channel 0 of item {n} in {s}"));
    }
    let plane = s.plane();
    let values: Vec<f64> = map.item(n)[..plane].iter().map(|v| v.as_f64()).collect();
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let constant = plane == 0 || min == max;
    let pixels = if constant {
        vec![0; plane]
    } else {
        values.iter().map(|&v| ((v - min) / (max - min) * 255.0).round() as u8).collect()
    };
    let (min, max) = if plane == 0 { (0.0, 0.0) } else { (min, max) };
    Ok((Graymap::new(s.w(), s.h(), pixels)?, Normalization { min, max, constant }))
}
