//! 8-bit RGB images and binary PPM (P6, maxval 255) I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest pixel count accepted from a PPM header.
const MAX_PIXELS: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image {
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

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Channel-first `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            f32::from(self.data[p * 3 + c]) / 255.0
        })
    }

    /// Inverse of [`Image::to_tensor`]; values are clamped to `[0, 1]` and rounded.
    pub fn from_chw(values: &[f32], width: usize, height: usize) -> Result<Self> {
        if values.len() != 3 * width * height {
            return Err(Error::dim(format!(
                "{} values for a 3x{height}x{width} image",
                values.len()
            )));
        }
        let hw = width * height;
        let mut data = vec![0u8; hw * 3];
        for (i, v) in values.iter().enumerate() {
            let (c, p) = (i / hw, i % hw);
            let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            data[p * 3 + c] = (v * 255.0).round() as u8;
        }
        Image::from_raw(width, height, data)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut cur = PpmCursor { bytes, pos: 0 };
        if cur.take(2) != Some(b"P6".as_slice()) {
            return Err(Error::Format("PPM magic must be P6".into()));
        }
        let width = cur.header_number("width")?;
        let height = cur.header_number("height")?;
        let maxval = cur.header_number("maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("PPM maxval {maxval} unsupported, need 255")));
        }
        if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
            return Err(Error::Format(format!("PPM size {width}x{height} out of range")));
        }
        match cur.take(1) {
            Some([c]) if c.is_ascii_whitespace() => {}
            _ => return Err(Error::Format("PPM header must end in one whitespace byte".into())),
        }
        let n = width * height * 3;
        let body = cur
            .take(n)
            .ok_or_else(|| Error::Format(format!("PPM pixel data truncated, need {n} bytes")))?;
        Image::from_raw(width, height, body.to_vec())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_ppm(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

struct PpmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PpmCursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn header_number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let digits = &self.bytes[start..self.pos];
        if digits.is_empty() || digits.len() > 9 {
            return Err(Error::Format(format!("PPM {what} missing or malformed")));
        }
        Ok(std::str::from_utf8(digits)
            .expect("ascii digits")
            .parse()
            .expect("at most nine digits"))
    }
}
