use std::path::Path;

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

/// Row-major grayscale image; row 0 is the top of the picture.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        GrayImage {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                what: "image data",
                left: data.len(),
                right: height * width,
            });
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        GrayImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear sample at fractional `(row, col)`, clamped to the border.
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        let axis = |p: f64, n: usize| {
            let p = p.clamp(0.0, (n - 1) as f64);
            let i0 = (p.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let (r0, r1, tr) = axis(row, self.height);
        let (c0, c1, tc) = axis(col, self.width);
        let top = self.get(r0, c0) + tc * (self.get(r0, c1) - self.get(r0, c0));
        let bot = self.get(r1, c0) + tc * (self.get(r1, c1) - self.get(r1, c0));
        top + tr * (bot - top)
    }

    /// Bilinear resize mapping pixel centers onto pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> GrayImage {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        GrayImage::from_fn(height, width, |r, c| {
            self.sample((r as f64 + 0.5) * sy - 0.5, (c as f64 + 0.5) * sx - 0.5)
        })
    }

    /// Binary PGM (`P5`) with 8- or 16-bit samples; values are clamped to
    /// `[0, 1]` and scaled to the full range.
    pub fn to_pgm(&self, bits: u8) -> Result<Vec<u8>> {
        let maxval: u32 = match bits {
            8 => 255,
            16 => 65535,
            other => return Err(Error::invalid(format!("PGM depth must be 8 or 16 bits, got {other}"))),
        };
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        for &v in &self.data {
            let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
            if bits == 8 {
                out.push(q as u8);
            } else {
                out.extend_from_slice(&(q as u16).to_be_bytes());
            }
        }
        Ok(out)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>, bits: u8) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_pgm(bits)?)
    }
}
