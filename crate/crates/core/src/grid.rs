//! Dense backward maps and bilinear resampling.
//!
//! A [`DenseGrid`] of extent `H × W` tells, for every pixel of the output
//! (dewarped) canvas, where to read in the source (warped) image. Channel 0
//! holds the normalized column coordinate `x`, channel 1 the normalized row
//! coordinate `y`; `(-1, -1)` addresses the centre of the top-left source
//! pixel and `(+1, +1)` the bottom-right one (align-corners). Reads outside
//! the source clamp to its border pixels.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::image::Image;
use crate::interp::{denormalize, normalize, resize_taps, taps};
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const DGRID_MAGIC: &[u8; 4] = b"DGRD";
pub const DGRID_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("{0}")]
    Contract(String),
    #[error("invalid .dgrid data at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    width: usize,
    height: usize,
    /// Channel 0 plane followed by channel 1 plane, each row-major.
    data: Vec<f32>,
}

impl DenseGrid {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, GridError> {
        if width == 0 || height == 0 || data.len() != 2 * width * height {
            return Err(GridError::Contract(format!(
                "grid {width}×{height} needs {} values, got {}",
                2 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// The grid that reads every pixel from its own position.
    pub fn identity(width: usize, height: usize) -> Self {
        let mut data = vec![0.0f32; 2 * width * height];
        let (xs, ys) = data.split_at_mut(width * height);
        for i in 0..height {
            let gy = normalize(i as f64, height) as f32;
            for j in 0..width {
                xs[i * width + j] = normalize(j as f64, width) as f32;
                ys[i * width + j] = gy;
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a grid from `f(row, col) -> (x, y)` in normalized units.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut data = vec![0.0f32; 2 * width * height];
        let (xs, ys) = data.split_at_mut(width * height);
        for i in 0..height {
            for j in 0..width {
                let (x, y) = f(i, j);
                xs[i * width + j] = x;
                ys[i * width + j] = y;
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Extracts batch item `index` of an `N × 2 × H × W` tensor.
    pub fn from_tensor(t: &Tensor<f32>, index: usize) -> Result<Self, GridError> {
        let (n, c, h, w) = t
            .dims4("DenseGrid::from_tensor")
            .map_err(|e| GridError::Contract(e.to_string()))?;
        if c != 2 || index >= n {
            return Err(GridError::Contract(format!(
                "expected N×2×H×W with item {index}, got {:?}",
                t.shape()
            )));
        }
        let plane = 2 * h * w;
        Self::new(w, h, t.data()[index * plane..(index + 1) * plane].to_vec())
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

    pub fn xs(&self) -> &[f32] {
        &self.data[..self.width * self.height]
    }

    pub fn ys(&self) -> &[f32] {
        &self.data[self.width * self.height..]
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (f32, f32) {
        let i = row * self.width + col;
        (self.data[i], self.data[self.width * self.height + i])
    }

    pub fn map(&self, f: impl Fn(f32, f32) -> (f32, f32)) -> Self {
        Self::from_fn(self.width, self.height, |r, c| {
            let (x, y) = self.at(r, c);
            f(x, y)
        })
    }

    pub fn max_abs_diff(&self, other: &DenseGrid) -> f32 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Mean Euclidean distance between corresponding entries, in normalized
    /// units.
    pub fn mean_endpoint_error(&self, other: &DenseGrid) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let n = self.width * self.height;
        let (ax, ay) = self.data.split_at(n);
        let (bx, by) = other.data.split_at(n);
        let total: f64 = (0..n)
            .map(|i| {
                let dx = (ax[i] - bx[i]) as f64;
                let dy = (ay[i] - by[i]) as f64;
                (dx * dx + dy * dy).sqrt()
            })
            .sum();
        total / n as f64
    }

    /// Bilinear resize of both channels to `height × width` (align-corners).
    /// Outputs are convex combinations, so the value range is preserved.
    pub fn upsample(&self, height: usize, width: usize) -> Result<DenseGrid, GridError> {
        if height < 2 || width < 2 {
            return Err(GridError::Contract(format!(
                "grid resize target must be at least 2×2, got {height}×{width}"
            )));
        }
        let ty = resize_taps(height, self.height);
        let tx = resize_taps(width, self.width);
        let mut data = Vec::with_capacity(2 * width * height);
        for plane in [self.xs(), self.ys()] {
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let v = |r: usize, c: usize| plane[r * self.width + c] as f64;
                    let top = v(y0, x0) + (v(y0, x1) - v(y0, x0)) * fx;
                    let bottom = v(y1, x0) + (v(y1, x1) - v(y1, x0)) * fx;
                    data.push((top + (bottom - top) * fy) as f32);
                }
            }
        }
        DenseGrid::new(width, height, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(DGRID_MAGIC);
        out.extend_from_slice(&DGRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.data {
            out.write_all(&v.to_le_bytes()).expect("vec write");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        let fmt = |offset: usize, msg: &str| GridError::Format {
            offset,
            msg: msg.to_string(),
        };
        if bytes.len() < 16 {
            return Err(fmt(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != DGRID_MAGIC {
            return Err(fmt(0, "bad magic"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if word(4) != DGRID_VERSION {
            return Err(fmt(4, &format!("unsupported version {}", word(4))));
        }
        let (height, width) = (word(8) as usize, word(12) as usize);
        if height == 0 || width == 0 {
            return Err(fmt(8, "zero extent"));
        }
        let n = 2 * height * width;
        let payload = &bytes[16..];
        if payload.len() != 4 * n {
            return Err(fmt(
                16 + payload.len().min(4 * n),
                &format!("expected {} payload bytes, found {}", 4 * n, payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        DenseGrid::new(width, height, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| GridError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let bytes = std::fs::read(path).map_err(|source| GridError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Reads `image` at every grid position: the output has the grid's extent and
/// the image's channel count.
pub fn bilinear_sample(image: &Image, grid: &DenseGrid) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let src = image.data();
    let mut out = Vec::with_capacity(grid.width * grid.height * c);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (gx, gy) = grid.at(row, col);
            let (x0, x1, fx) = taps(denormalize(gx as f64, w), w);
            let (y0, y1, fy) = taps(denormalize(gy as f64, h), h);
            for ch in 0..c {
                let v = |r: usize, q: usize| src[(r * w + q) * c + ch] as f64;
                let value = if fx == 0.0 && fy == 0.0 {
                    v(y0, x0)
                } else {
                    let top = v(y0, x0) + (v(y0, x1) - v(y0, x0)) * fx;
                    let bottom = v(y1, x0) + (v(y1, x1) - v(y1, x0)) * fx;
                    top + (bottom - top) * fy
                };
                out.push(value as f32);
            }
        }
    }
    Image::new(grid.width, grid.height, c, out).expect("consistent extents")
}

/// Bilinear (align-corners) resize through the same sampling kernel.
pub fn resize_image(image: &Image, height: usize, width: usize) -> Image {
    bilinear_sample(image, &DenseGrid::identity(width, height))
}

/// Dewarps `image` at its own resolution with a grid predicted at any
/// (typically lower) resolution.
pub fn unwarp(image: &Image, grid: &DenseGrid) -> Result<Image, GridError> {
    let full = if grid.width == image.width() && grid.height == image.height() {
        grid.clone()
    } else {
        grid.upsample(image.height(), image.width())?
    };
    Ok(bilinear_sample(image, &full))
}
