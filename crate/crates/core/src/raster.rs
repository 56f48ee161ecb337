//! Binary rasters and the 1-bit run-length export format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RLE_MAGIC: &[u8; 4] = b"PRLE";

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated data")]
    Truncated,
    #[error("runs cover {got} pixels, expected {expected}")]
    Length { got: usize, expected: usize },
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub u0: u32,
    pub v0: u32,
    pub u1: u32,
    pub v1: u32,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for v in 0..height {
            for u in 0..width {
                if f(u, v) {
                    m.set(u, v, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[(v * self.width + u) as usize]
    }

    /// Signed-coordinate lookup; out of bounds reads as unset.
    #[inline]
    pub fn get_i(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && (u as u32) < self.width && (v as u32) < self.height && self.get(u as u32, v as u32)
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, on: bool) {
        self.data[(v * self.width + u) as usize] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    /// Set pixels as `(u, v)`, row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for (u, v) in self.pixels() {
            bb = Some(match bb {
                None => BBox { u0: u, v0: v, u1: u, v1: v },
                Some(b) => BBox { u0: b.u0.min(u), v0: b.v0.min(v), u1: b.u1.max(u), v1: b.v1.max(v) },
            });
        }
        bb
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }

    /// Alternating run lengths over the row-major raster, starting with an unset run.
    pub fn runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.data {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(width: u32, height: u32, runs: &[u32]) -> Result<Self, RasterError> {
        let expected = (width * height) as usize;
        let got: usize = runs.iter().map(|&r| r as usize).sum();
        if got != expected {
            return Err(RasterError::Length { got, expected });
        }
        let mut data = Vec::with_capacity(expected);
        for (i, &r) in runs.iter().enumerate() {
            data.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        Ok(Self { width, height, data })
    }

    /// `PRLE`, u16 width, u16 height, u32 run count, then u32 runs (little endian).
    pub fn to_rle_bytes(&self) -> Vec<u8> {
        let runs = self.runs();
        let mut out = Vec::with_capacity(12 + 4 * runs.len());
        out.extend_from_slice(RLE_MAGIC);
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
        for r in runs {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out
    }

    pub fn from_rle_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < 12 {
            return Err(RasterError::Truncated);
        }
        if &bytes[0..4] != RLE_MAGIC {
            return Err(RasterError::BadMagic);
        }
        let width = u16::from_le_bytes([bytes[4], bytes[5]]) as u32;
        let height = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < 4 * n {
            return Err(RasterError::Truncated);
        }
        let runs: Vec<u32> = body.chunks_exact(4).take(n).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_runs(width, height, &runs)
    }
}
