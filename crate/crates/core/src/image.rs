//! Single-channel `f32` images and 16-bit binary PGM I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_extent(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn flip_lr(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn flip_ud(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y)
        })
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([1, 1, self.height, self.width], self.data.clone()).expect("extent matches")
    }

    /// Image from sample `n` of a single-channel NCHW tensor.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<Self> {
        let [_, c, h, w] = t.dims4()?;
        if c != 1 {
            return Err(Error::shape(format!("expected one channel, got {c}")));
        }
        Self::new(w, h, t.sample(n)?.into_vec())
    }

    /// Stacks equally sized images into an `[N, 1, H, W]` tensor.
    pub fn batch(images: &[&Image2D]) -> Result<Tensor<f32>> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("empty image batch"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if !im.same_extent(first) {
                return Err(Error::shape("image batch with mixed extents"));
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::new([images.len(), 1, first.height, first.width], data)
    }

    /// Encodes as binary PGM, `value = round(65535·clamp(v, 0, 1))`.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 2);
        for &v in &self.data {
            out.extend_from_slice(&quantize16(v).to_be_bytes());
        }
        out
    }

    pub fn from_pgm(bytes: &[u8], context: &str) -> Result<Self> {
        let err = |m: &str| Error::format(context, m.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(err("truncated header"));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ASCII header"))?,
            );
        }
        if fields[0] != "P5" {
            return Err(err("not a binary PGM (P5)"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
        let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(err("maxval out of range"));
        }
        pos += 1; // single whitespace after maxval
        let bpp = if maxval > 255 { 2 } else { 1 };
        let payload = bytes.get(pos..).ok_or_else(|| err("missing payload"))?;
        if payload.len() != w * h * bpp {
            return Err(err("payload size does not match header"));
        }
        let scale = 1.0f32 / maxval as f32;
        let data = if bpp == 2 {
            payload
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
                .collect()
        } else {
            payload.iter().map(|&b| b as f32 * scale).collect()
        };
        Self::new(w, h, data)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm16()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes, &path.display().to_string())
    }
}

/// 16-bit code of a normalized value.
pub fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

/// Value a normalized pixel takes after a 16-bit PGM round trip.
pub fn snap16(v: f32) -> f32 {
    quantize16(v) as f32 * (1.0 / 65535.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_header_and_byte_order() {
        let im = Image2D::new(2, 1, vec![0.0, 1.0]).unwrap();
        let bytes = im.to_pgm16();
        assert_eq!(&bytes[..13], b"P5\n2 1\n65535\n");
        assert_eq!(&bytes[13..], &[0, 0, 0xff, 0xff]);
    }

    #[test]
    fn flips_are_involutions() {
        let im = Image2D::from_fn(3, 2, |x, y| (x + 10 * y) as f32);
        assert_eq!(im.flip_lr().get(0, 1), 12.0);
        assert_eq!(im.flip_ud().flip_ud(), im);
        assert_eq!(im.flip_lr().flip_lr(), im);
    }

    #[test]
    fn rejects_malformed_pgm() {
        assert!(Image2D::from_pgm(b"P2\n1 1\n255\n0", "t").is_err());
        assert!(Image2D::from_pgm(b"P5\n2 2\n255\n\x00", "t").is_err());
    }

    proptest! {
        #[test]
        fn pgm_round_trip_within_quantization(vals in prop::collection::vec(0.0f32..=1.0, 12)) {
            let im = Image2D::new(4, 3, vals).unwrap();
            let back = Image2D::from_pgm(&im.to_pgm16(), "mem").unwrap();
            for (a, b) in im.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
            }
        }
    }
}
