//! Edge-preserving smoothing of dewarped pages under a sharpness budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocParams {
    /// Spatial sigma in pixels.
    pub sigma_s: f64,
    /// Range sigma on [0, 1] luminance.
    pub sigma_r: f64,
    /// Minimum retained fraction of the variance of the Laplacian.
    pub rho: f64,
    /// Number of filter attempts; σr halves after each rejected one.
    pub max_attempts: usize,
}

impl Default for PostprocParams {
    fn default() -> Self {
        Self {
            sigma_s: 3.0,
            sigma_r: 0.1,
            rho: 0.8,
            max_attempts: 4,
        }
    }
}

impl PostprocParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return Err(format!("sigma_s must be positive, got {}", self.sigma_s));
        }
        if !(self.sigma_r > 0.0) {
            return Err(format!("sigma_r must be positive, got {}", self.sigma_r));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(format!("rho must lie in (0, 1], got {}", self.rho));
        }
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1".into());
        }
        Ok(())
    }
}

/// Bilateral filter with a `ceil(2σs)` radius. Range weights compare
/// luminance; all channels share the weights. Taps outside the image are
/// dropped and the remaining weights renormalized.
pub fn bilateral_filter(image: &Image, sigma_s: f64, sigma_r: f64) -> Image {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let radius = (2.0 * sigma_s).ceil() as isize;
    let luma: Vec<f64> = image.luminance().data().iter().map(|&v| v as f64).collect();
    let spatial: Vec<f64> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| ((dx * dx + dy * dy) as f64) / (-2.0 * sigma_s * sigma_s)))
        .map(f64::exp)
        .collect();
    let inv_range = if sigma_r.is_finite() { 1.0 / (2.0 * sigma_r * sigma_r) } else { 0.0 };
    let span = (2 * radius + 1) as usize;
    let src = image.data();
    let mut out = vec![0f32; src.len()];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(r, row)| {
        let mut acc = vec![0f64; ch];
        for c in 0..w {
            let centre = luma[r * w + c];
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut norm = 0.0;
            for dy in -radius..=radius {
                let rr = r as isize + dy;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                let rr = rr as usize;
                for dx in -radius..=radius {
                    let cc = c as isize + dx;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let cc = cc as usize;
                    let diff = luma[rr * w + cc] - centre;
                    let k = spatial[(dy + radius) as usize * span + (dx + radius) as usize] * (-diff * diff * inv_range).exp();
                    norm += k;
                    let p = &src[(rr * w + cc) * ch..][..ch];
                    for (a, &v) in acc.iter_mut().zip(p) {
                        *a += k * v as f64;
                    }
                }
            }
            for (o, a) in row[c * ch..][..ch].iter_mut().zip(&acc) {
                *o = (a / norm).clamp(0.0, 1.0) as f32;
            }
        }
    });
    Image::new(w, h, ch, out).expect("same layout")
}

/// Variance of the 3×3 Laplacian (centre 4, cross −1) of the luminance,
/// over interior pixels where the kernel fits. Zero for images thinner
/// than three pixels.
pub fn variance_of_laplacian(image: &Image) -> f64 {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let luma = image.luminance();
    let p = |r: usize, c: usize| luma.data()[r * w + c] as f64;
    let (mut sum, mut sq) = (0.0, 0.0);
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let v = 4.0 * p(r, c) - p(r - 1, c) - p(r + 1, c) - p(r, c - 1) - p(r, c + 1);
            sum += v;
            sq += v * v;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    (sq / n - mean * mean).max(0.0)
}

/// Ratio of sharpness after to before; 0/0 counts as fully retained.
pub fn sharpness_ratio(before: f64, after: f64) -> f64 {
    if before <= 0.0 {
        if after <= 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        after / before
    }
}

#[derive(Clone, Debug)]
pub struct Smoothed {
    pub image: Image,
    /// Range sigma of the accepted attempt; `None` when the input came back
    /// unchanged because no attempt kept enough sharpness.
    pub sigma_r: Option<f64>,
    pub attempts: usize,
    pub ratio: f64,
}

/// Bilateral smoothing whose strength is backed off until the variance of
/// the Laplacian keeps at least `rho` of its original value.
pub fn adaptive_smooth(image: &Image, params: &PostprocParams) -> Smoothed {
    let before = variance_of_laplacian(image);
    let mut sigma_r = params.sigma_r;
    for attempt in 1..=params.max_attempts {
        let filtered = bilateral_filter(image, params.sigma_s, sigma_r);
        let ratio = sharpness_ratio(before, variance_of_laplacian(&filtered));
        log::debug!("postproc attempt {attempt}: sigma_r {sigma_r} ratio {ratio:.4}");
        if ratio >= params.rho {
            return Smoothed {
                image: filtered,
                sigma_r: Some(sigma_r),
                attempts: attempt,
                ratio,
            };
        }
        sigma_r *= 0.5;
    }
    Smoothed {
        image: image.clone(),
        sigma_r: None,
        attempts: params.max_attempts,
        ratio: 1.0,
    }
}
