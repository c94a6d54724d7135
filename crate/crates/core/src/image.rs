//! Floating-point raster images with interleaved channels.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image buffer holds {got} values, {width}×{height}×{channels} needs {expected}")]
    Length {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        got: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("image size mismatch: {0}×{1} vs {2}×{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

/// Luminance weights applied to (R, G, B).
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// A `height × width × channels` image, row-major with interleaved channels.
/// Intensities are nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::Length {
                width,
                height,
                channels,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let channels = value.len();
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width * height * channels)
            .collect();
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Builds a grayscale image from `f(row, col)`.
    pub fn gray_from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
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
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Single-channel luminance (identity for grayscale input).
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Three-channel view (grayscale replicated).
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Planar `C × H × W` copy of the values.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; hw * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * hw + i] = v;
            }
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, channels: usize, planar: &[f32]) -> Result<Self, ImageError> {
        let hw = width * height;
        if planar.len() != hw * channels {
            return Err(ImageError::Length {
                width,
                height,
                channels,
                expected: hw * channels,
                got: planar.len(),
            });
        }
        let mut data = vec![0.0; hw * channels];
        for c in 0..channels {
            for i in 0..hw {
                data[i * channels + c] = planar[c * hw + i];
            }
        }
        Image::new(width, height, channels, data)
    }

    /// Rotates a quarter turn counter-clockwise.
    pub fn rot90(&self) -> Image {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0.0; self.data.len()];
        // new(r, col) = old(col, w - 1 - r); new extents h_new = w, w_new = h
        for r in 0..w {
            for col in 0..h {
                for ch in 0..c {
                    data[(r * h + col) * c + ch] = self.get(col, w - 1 - r, ch);
                }
            }
        }
        Image {
            width: h,
            height: w,
            channels: c,
            data,
        }
    }
}

/// Peak signal-to-noise ratio in dB over pixels where `mask(row, col)` holds,
/// for intensities in [0, 1].
pub fn psnr_masked(a: &Image, b: &Image, mask: impl Fn(usize, usize) -> bool) -> f64 {
    assert!(a.same_size(b) && a.channels() == b.channels());
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for r in 0..a.height() {
        for c in 0..a.width() {
            if !mask(r, c) {
                continue;
            }
            for (x, y) in a.pixel(r, c).iter().zip(b.pixel(r, c)) {
                let d = (*x - *y) as f64;
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return f64::INFINITY;
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR excluding a border band of `fraction` of each extent.
pub fn psnr_interior(a: &Image, b: &Image, fraction: f64) -> f64 {
    let (h, w) = (a.height(), a.width());
    let my = (h as f64 * fraction).round() as usize;
    let mx = (w as f64 * fraction).round() as usize;
    psnr_masked(a, b, |r, c| r >= my && r + my < h && c >= mx && c + mx < w)
}
