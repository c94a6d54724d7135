//! Canny edge detection for edge-loss targets.

use crate::image::Image;

/// Maps whose largest gradient magnitude falls below this are edge-free.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.4,
            low_ratio: 0.1,
            high_ratio: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gaussian_sigma > 0.0) {
            return Err(format!("gaussian_sigma must be positive, got {}", self.gaussian_sigma));
        }
        if !(0.0 < self.low_ratio && self.low_ratio < self.high_ratio && self.high_ratio <= 1.0) {
            return Err(format!(
                "thresholds must satisfy 0 < low < high <= 1, got {} / {}",
                self.low_ratio, self.high_ratio
            ));
        }
        Ok(())
    }
}

/// Row-major `f64` plane with clamped reads.
#[derive(Clone, Debug)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn from_image(gray: &Image) -> Self {
        let gray = gray.luminance();
        Self {
            width: gray.width(),
            height: gray.height(),
            data: gray.data().iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    fn at(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }
}

fn gaussian_kernel5(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - 2.0;
        *v = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable 5×5 Gaussian blur with replicated borders.
pub fn gaussian_blur5(p: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel5(sigma);
    let (w, h) = (p.width, p.height);
    let pass = |src: &Plane, horizontal: bool| {
        let mut data = vec![0.0; w * h];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let read = |o: isize| {
                    if horizontal {
                        src.at(r, c + o)
                    } else {
                        src.at(r + o, c)
                    }
                };
                data[r as usize * w + c as usize] =
                    k[2] * read(0) + k[1] * (read(-1) + read(1)) + k[0] * (read(-2) + read(2));
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    };
    pass(&pass(p, true), false)
}

/// Sobel derivatives `(gx, gy)` along columns and rows.
pub fn sobel(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (p.width, p.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            gx[i] = (p.at(r - 1, c + 1) + 2.0 * p.at(r, c + 1) + p.at(r + 1, c + 1))
                - (p.at(r - 1, c - 1) + 2.0 * p.at(r, c - 1) + p.at(r + 1, c - 1));
            gy[i] = (p.at(r + 1, c - 1) + 2.0 * p.at(r + 1, c) + p.at(r + 1, c + 1))
                - (p.at(r - 1, c - 1) + 2.0 * p.at(r - 1, c) + p.at(r - 1, c + 1));
        }
    }
    (gx, gy)
}

/// Gradient magnitude of the blurred luminance, before suppression.
pub fn gradient_magnitude(image: &Image, params: &CannyParams) -> Plane {
    let blurred = gaussian_blur5(&Plane::from_image(image), params.gaussian_sigma);
    let (gx, gy) = sobel(&blurred);
    Plane {
        width: blurred.width,
        height: blurred.height,
        data: gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect(),
    }
}

/// Unit step `(dc, dr)` toward the neighbour the gradient points at, with the
/// direction quantized to multiples of 45°.
fn forward_step(gx: f64, gy: f64) -> (isize, isize) {
    let octant = (gy.atan2(gx) / std::f64::consts::FRAC_PI_4).round() as i32;
    match octant.rem_euclid(8) {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        3 => (-1, 1),
        4 => (-1, 0),
        5 => (-1, -1),
        6 => (0, -1),
        _ => (1, -1),
    }
}

/// Binary edge map (values 0 or 1) of the luminance of `image`.
pub fn canny(image: &Image, params: &CannyParams) -> Image {
    let (w, h) = (image.width(), image.height());
    let blurred = gaussian_blur5(&Plane::from_image(image), params.gaussian_sigma);
    let (gx, gy) = sobel(&blurred);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mut out = vec![0.0f32; w * h];
    if max < MAGNITUDE_FLOOR {
        return Image::new(w, h, 1, out).expect("consistent extents");
    }

    let mag_at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            mag[r as usize * w + c as usize]
        }
    };
    // Plateaus two pixels wide keep only the pixel further along the
    // gradient, which keeps the rule rotation-equivariant.
    let mut thin = vec![0.0f64; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dc, dr) = forward_step(gx[i], gy[i]);
            if m > mag_at(r + dr, c + dc) && m >= mag_at(r - dr, c - dc) {
                thin[i] = m;
            }
        }
    }

    let high = params.high_ratio * max;
    let low = params.low_ratio * max;
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= high).collect();
    for &i in &stack {
        out[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if out[j] == 0.0 && thin[j] >= low {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Image::new(w, h, 1, out).expect("consistent extents")
}
