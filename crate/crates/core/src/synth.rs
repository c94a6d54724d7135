//! Synthetic warped documents with analytic ground-truth grids.
//!
//! A warp is a smooth forward map `W(u) = u + d(u)` on the unit square that
//! takes a position on the flat page to its position in the warped photo.
//! The ground-truth dewarping grid is `W` itself (normalized to [-1, 1]); the
//! warped image is rendered through a numerical inverse of `W`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edges::{canny, CannyParams};
use crate::grid::{bilinear_sample, DenseGrid};
use crate::image::Image;
use crate::io::{save_image, PnmError};

pub const MAX_PRIMITIVES: usize = 4;
pub const AMPLITUDE_RANGE: (f64, f64) = (0.02, 0.12);
pub const WIDTH_RANGE: (f64, f64) = (0.05, 0.4);
pub const MAX_CORNER_OFFSET: f64 = 0.08;
pub const MAX_REDRAWS: u64 = 10;
pub const INVERSION_MAX_ITERS: usize = 30;
pub const INVERSION_STEP_TOL: f64 = 1e-4;
pub const INVERSION_RESIDUAL_TOL: f64 = 1e-3;

/// Combined Lipschitz budget of all bending primitives; keeps `W` injective
/// and the inversion a contraction.
const LIPSCHITZ_BUDGET: f64 = 0.4;
/// Largest slope of `exp(-t²)`, i.e. `sqrt(2/e)`.
const CURVE_SLOPE: f64 = 0.857_763_884_960_706_8;
const FOLD_SLOPE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid warp spec: {0}")]
    InvalidSpec(String),
    #[error("warp draw for seed {seed} rejected {attempts} times (last residual {residual:.2e})")]
    Rejected {
        seed: u64,
        attempts: u64,
        residual: f64,
    },
    #[error("inversion did not converge (residual {residual:.2e})")]
    NotInvertible { residual: f64 },
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    /// Smooth page curl, `g(t) = exp(-t²/σ²)`.
    Curve,
    /// Crease, `g(t) = σ / (|t| + σ)`.
    Fold,
    /// Uniform shift, `g ≡ 1`.
    Translation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 2],
    /// Unit displacement direction; the profile varies along it as well.
    pub direction: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

impl Primitive {
    #[inline]
    fn profile(&self, u: [f64; 2]) -> f64 {
        let t = (u[0] - self.center[0]) * self.direction[0] + (u[1] - self.center[1]) * self.direction[1];
        match self.kind {
            PrimitiveKind::Curve => (-(t * t) / (self.width * self.width)).exp(),
            PrimitiveKind::Fold => self.width / (t.abs() + self.width),
            PrimitiveKind::Translation => 1.0,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Curve => self.amplitude * CURVE_SLOPE / self.width,
            PrimitiveKind::Fold => self.amplitude * FOLD_SLOPE / self.width,
            PrimitiveKind::Translation => 0.0,
        }
    }
}

/// Everything needed to reproduce one warp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    /// Offsets of the top-left, top-right, bottom-left and bottom-right
    /// corners, bilinearly blended over the page.
    pub corners: [[f64; 2]; 4],
    pub background: [f32; 3],
    /// Shrink the warped page about the canvas centre so it stays on canvas.
    pub fit_to_canvas: bool,
}

impl WarpSpec {
    pub fn identity() -> Self {
        Self {
            seed: 0,
            primitives: Vec::new(),
            corners: [[0.0; 2]; 4],
            background: [0.0; 3],
            fit_to_canvas: false,
        }
    }

    pub fn translation(delta: [f64; 2]) -> Self {
        let norm = delta[0].hypot(delta[1]);
        let direction = if norm > 0.0 {
            [delta[0] / norm, delta[1] / norm]
        } else {
            [1.0, 0.0]
        };
        Self {
            primitives: vec![Primitive {
                kind: PrimitiveKind::Translation,
                center: [0.5, 0.5],
                direction,
                amplitude: norm,
                width: WIDTH_RANGE.1,
            }],
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.primitives.len() > MAX_PRIMITIVES {
            return bad(format!("{} primitives (max {MAX_PRIMITIVES})", self.primitives.len()));
        }
        for (k, p) in self.primitives.iter().enumerate() {
            let n = p.direction[0].hypot(p.direction[1]);
            if (n - 1.0).abs() > 1e-9 {
                return bad(format!("primitive {k}: direction is not a unit vector"));
            }
            if p.kind != PrimitiveKind::Translation {
                if !(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1).contains(&p.amplitude) {
                    return bad(format!("primitive {k}: amplitude {} out of range", p.amplitude));
                }
                if !(WIDTH_RANGE.0..=WIDTH_RANGE.1).contains(&p.width) {
                    return bad(format!("primitive {k}: width {} out of range", p.width));
                }
            } else if !p.amplitude.is_finite() {
                return bad(format!("primitive {k}: non-finite amplitude"));
            }
        }
        for (k, o) in self.corners.iter().enumerate() {
            if o[0].hypot(o[1]) > MAX_CORNER_OFFSET + 1e-12 {
                return bad(format!("corner {k}: offset exceeds {MAX_CORNER_OFFSET}"));
            }
        }
        Ok(())
    }

    /// Draws a random spec; `attempt` selects an independent sub-stream.
    pub fn random(seed: u64, attempt: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let k = rng.gen_range(1..=MAX_PRIMITIVES);
        let budget = LIPSCHITZ_BUDGET / k as f64;
        let primitives = (0..k)
            .map(|_| {
                let kind = if rng.gen_bool(0.7) {
                    PrimitiveKind::Curve
                } else {
                    PrimitiveKind::Fold
                };
                let slope = if kind == PrimitiveKind::Curve {
                    CURVE_SLOPE
                } else {
                    FOLD_SLOPE
                };
                let min_width = (AMPLITUDE_RANGE.0 * slope / budget).max(WIDTH_RANGE.0);
                let width = rng.gen_range(min_width..=WIDTH_RANGE.1);
                let max_amp = (budget * width / slope).min(AMPLITUDE_RANGE.1);
                let amplitude = rng.gen_range(AMPLITUDE_RANGE.0..=max_amp);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                Primitive {
                    kind,
                    center: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                    direction: [angle.cos(), angle.sin()],
                    amplitude,
                    width,
                }
            })
            .collect();
        // Corners move mostly inward, as under a perspective view.
        let inward: [[f64; 2]; 4] = [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]];
        let corners = inward.map(|s| {
            let o = [
                s[0] * rng.gen_range(-0.015..0.05),
                s[1] * rng.gen_range(-0.015..0.05),
            ];
            let n = o[0].hypot(o[1]);
            if n > MAX_CORNER_OFFSET {
                o.map(|v| v * MAX_CORNER_OFFSET / n)
            } else {
                o
            }
        });
        let background = [
            rng.gen_range(0.05..0.5),
            rng.gen_range(0.05..0.5),
            rng.gen_range(0.05..0.5),
        ];
        Self {
            seed,
            primitives,
            corners,
            background,
            fit_to_canvas: true,
        }
    }

    fn max_corner(&self) -> f64 {
        self.corners.iter().map(|o| o[0].hypot(o[1])).fold(0.0, f64::max)
    }
}

/// The forward map of a spec, with its canvas-fit scale resolved.
#[derive(Clone, Debug)]
pub struct WarpField {
    spec: WarpSpec,
    scale: f64,
}

impl WarpField {
    /// Resolves the canvas-fit scale by evaluating the map on the `size²`
    /// lattice the ground truth is sampled on.
    pub fn new(spec: WarpSpec, size: usize) -> Result<Self, SynthError> {
        spec.validate()?;
        let mut field = Self { spec, scale: 1.0 };
        if field.spec.fit_to_canvas {
            let mut dev = 0.5f64;
            for_lattice(size, |u| {
                let w = field.raw(u);
                dev = dev.max((w[0] - 0.5).abs()).max((w[1] - 0.5).abs());
            });
            field.scale = 0.5 / dev;
        }
        Ok(field)
    }

    pub fn spec(&self) -> &WarpSpec {
        &self.spec
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Unscaled bending + perspective displacement.
    #[inline]
    fn bend(&self, u: [f64; 2]) -> [f64; 2] {
        let mut d = [0.0, 0.0];
        for p in &self.spec.primitives {
            let g = p.amplitude * p.profile(u);
            d[0] += g * p.direction[0];
            d[1] += g * p.direction[1];
        }
        let [tl, tr, bl, br] = self.spec.corners;
        let (x, y) = (u[0], u[1]);
        for a in 0..2 {
            d[a] += (1.0 - y) * ((1.0 - x) * tl[a] + x * tr[a]) + y * ((1.0 - x) * bl[a] + x * br[a]);
        }
        d
    }

    #[inline]
    fn raw(&self, u: [f64; 2]) -> [f64; 2] {
        let d = self.bend(u);
        [u[0] + d[0], u[1] + d[1]]
    }

    /// `W(u)` in unit-square coordinates.
    #[inline]
    pub fn forward(&self, u: [f64; 2]) -> [f64; 2] {
        let w = self.raw(u);
        let s = self.scale;
        [0.5 + s * (w[0] - 0.5), 0.5 + s * (w[1] - 0.5)]
    }

    /// `d(u) = W(u) - u`.
    pub fn displacement(&self, u: [f64; 2]) -> [f64; 2] {
        let w = self.forward(u);
        [w[0] - u[0], w[1] - u[1]]
    }

    /// Upper bound on `|d(u)|` over the unit square.
    pub fn displacement_bound(&self) -> f64 {
        let bend: f64 = self.spec.primitives.iter().map(|p| p.amplitude).sum();
        self.scale * (bend + self.spec.max_corner()) + (1.0 - self.scale) * 0.5f64.sqrt()
    }

    /// Solves `W(u) = x` by fixed-point iteration; returns the solution and
    /// the number of iterations, or `None` without convergence.
    pub fn invert(&self, x: [f64; 2]) -> Option<([f64; 2], usize)> {
        let s = self.scale;
        let target = [0.5 + (x[0] - 0.5) / s, 0.5 + (x[1] - 0.5) / s];
        let mut u = target;
        for iter in 1..=INVERSION_MAX_ITERS {
            let d = self.bend(u);
            let next = [target[0] - d[0], target[1] - d[1]];
            let step = (next[0] - u[0]).abs().max((next[1] - u[1]).abs());
            u = next;
            if !step.is_finite() {
                return None;
            }
            if step < INVERSION_STEP_TOL {
                return Some((u, iter));
            }
        }
        None
    }

    /// The inverse sampled on the `size²` lattice of the warped canvas, with
    /// the lattice-wide residual `max |W(F(x)) - x|`.
    pub fn invert_lattice(&self, size: usize) -> Result<(Vec<[f64; 2]>, f64), SynthError> {
        let mut out = Vec::with_capacity(size * size);
        let mut residual = 0.0f64;
        let mut failed = false;
        for_lattice(size, |x| {
            match self.invert(x) {
                Some((u, _)) => {
                    let w = self.forward(u);
                    residual = residual.max((w[0] - x[0]).abs()).max((w[1] - x[1]).abs());
                    out.push(u);
                }
                None => {
                    failed = true;
                    out.push(x);
                }
            }
        });
        if failed || !(residual < INVERSION_RESIDUAL_TOL) {
            return Err(SynthError::NotInvertible {
                residual: if failed { f64::INFINITY } else { residual },
            });
        }
        Ok((out, residual))
    }

    /// The ground-truth dewarping grid: `W` on the `size²` lattice,
    /// normalized to [-1, 1].
    pub fn grid(&self, size: usize) -> DenseGrid {
        let step = 1.0 / (size - 1).max(1) as f64;
        DenseGrid::from_fn(size, size, |r, c| {
            let w = self.forward([c as f64 * step, r as f64 * step]);
            (
                ((2.0 * w[0] - 1.0) as f32).clamp(-1.0, 1.0),
                ((2.0 * w[1] - 1.0) as f32).clamp(-1.0, 1.0),
            )
        })
    }
}

/// Visits the align-corners lattice points `(c, r) / (size - 1)` row by row.
fn for_lattice(size: usize, mut f: impl FnMut([f64; 2])) {
    let step = 1.0 / (size - 1).max(1) as f64;
    for r in 0..size {
        for c in 0..size {
            f([c as f64 * step, r as f64 * step]);
        }
    }
}

/// Draws specs from successive sub-streams until one inverts cleanly.
pub fn make_forward_field(seed: u64, size: usize) -> Result<(WarpField, Vec<[f64; 2]>), SynthError> {
    let mut residual = f64::INFINITY;
    for attempt in 0..MAX_REDRAWS {
        let field = WarpField::new(WarpSpec::random(seed, attempt), size)?;
        match field.invert_lattice(size) {
            Ok((inverse, _)) => return Ok((field, inverse)),
            Err(SynthError::NotInvertible { residual: r }) => residual = r,
            Err(e) => return Err(e),
        }
    }
    Err(SynthError::Rejected {
        seed,
        attempts: MAX_REDRAWS,
        residual,
    })
}

/// Optional photometric augmentation of the warped render.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    /// Standard deviation of additive Gaussian noise (at most 0.02).
    pub noise_sigma: f32,
    /// Maximum relative brightness change (at most 0.1).
    pub brightness_jitter: f32,
}

impl Augment {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=0.02).contains(&self.noise_sigma) {
            return Err(format!("noise_sigma {} outside [0, 0.02]", self.noise_sigma));
        }
        if !(0.0..=0.1).contains(&self.brightness_jitter) {
            return Err(format!("brightness_jitter {} outside [0, 0.1]", self.brightness_jitter));
        }
        Ok(())
    }

    fn apply(&self, image: &mut Image, seed: u64) {
        if self.noise_sigma == 0.0 && self.brightness_jitter == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let gain = 1.0 + rng.gen_range(-1.0..=1.0) * self.brightness_jitter;
        let noise = Normal::new(0.0f32, self.noise_sigma).expect("validated sigma");
        for v in image.data_mut() {
            *v = (*v * gain + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
}

pub struct WarpSample {
    pub warped: Image,
    pub gt_grid: DenseGrid,
    pub gt_edges: Image,
    pub flat_source: Image,
    pub spec: WarpSpec,
}

/// Renders `flat` through the inverse of `field`; `inverse` must be
/// [`WarpField::invert_lattice`] at the image size.
pub fn render_with_inverse(flat: &Image, field: &WarpField, inverse: &[[f64; 2]]) -> WarpSample {
    let size = flat.width();
    assert_eq!(flat.height(), size, "square source expected");
    assert_eq!(inverse.len(), size * size);
    let flat = flat.to_rgb();
    let bg = field.spec.background;
    // Positions outside the page read the background; inside, they become a
    // grid for the shared bilinear sampler.
    let inside = |u: &[f64; 2]| (0.0..=1.0).contains(&u[0]) && (0.0..=1.0).contains(&u[1]);
    let read_grid = DenseGrid::from_fn(size, size, |r, c| {
        let u = inverse[r * size + c];
        ((2.0 * u[0] - 1.0) as f32, (2.0 * u[1] - 1.0) as f32)
    });
    let mut warped = bilinear_sample(&flat, &read_grid);
    for (i, u) in inverse.iter().enumerate() {
        if !inside(u) {
            warped.data_mut()[3 * i..3 * i + 3].copy_from_slice(&bg);
        }
    }
    let gt_edges = canny(&warped, &CannyParams::default());
    WarpSample {
        warped,
        gt_grid: field.grid(size),
        gt_edges,
        flat_source: flat,
        spec: field.spec.clone(),
    }
}

/// Renders `flat` (square, RGB or gray) under `spec`.
pub fn render_sample(flat: &Image, spec: WarpSpec) -> Result<WarpSample, SynthError> {
    let field = WarpField::new(spec, flat.width())?;
    let (inverse, _) = field.invert_lattice(flat.width())?;
    Ok(render_with_inverse(flat, &field, &inverse))
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    mix_seed(seed, index.wrapping_add(1))
}

pub const PAGE_LUMA: f32 = 0.95;

struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

/// Fraction of the pixel footprint `[p - h, p + h]` covered by `[a, b]`.
#[inline]
fn coverage(p: f64, h: f64, a: f64, b: f64) -> f64 {
    ((b.min(p + h) - a.max(p - h)) / (2.0 * h)).clamp(0.0, 1.0)
}

/// A procedural page: near-white background with dark horizontal text-line
/// bars, sometimes a title block and a margin rule. Returns the image and the
/// number of bars (title included).
pub fn make_flat_document_with_bars(seed: u64, size: usize) -> (Image, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD0C));
    let s = size as f64;
    let margin_x = rng.gen_range(0.08..0.14) * s;
    let right = s - rng.gen_range(0.08..0.14) * s;
    let mut y = rng.gen_range(0.07..0.11) * s;
    let bottom = s - rng.gen_range(0.06..0.1) * s;
    let mut bars: Vec<(Rect, [f32; 3])> = Vec::new();

    let ink = |rng: &mut ChaCha8Rng| {
        let base = rng.gen_range(0.05..0.3f32);
        [base, base, (base + rng.gen_range(0.0..0.1f32)).min(0.35)]
    };
    if rng.gen_bool(0.5) {
        let h = rng.gen_range(0.035..0.05) * s;
        let w = rng.gen_range(0.35..0.6) * (right - margin_x);
        bars.push((
            Rect {
                x0: margin_x,
                x1: margin_x + w,
                y0: y,
                y1: y + h,
            },
            ink(&mut rng),
        ));
        y += h + rng.gen_range(0.03..0.05) * s;
    }
    let lines = rng.gen_range(8..=20usize).max(8);
    let pitch = (bottom - y) / lines as f64;
    for i in 0..lines {
        let height = pitch * rng.gen_range(0.42..0.55);
        let top = y + i as f64 * pitch + rng.gen_range(0.0..(pitch - height) * 0.3);
        let full = right - margin_x;
        let len = if i + 1 == lines || rng.gen_bool(0.2) {
            full * rng.gen_range(0.3..0.75)
        } else {
            full * rng.gen_range(0.85..1.0)
        };
        bars.push((
            Rect {
                x0: margin_x,
                x1: margin_x + len,
                y0: top,
                y1: top + height,
            },
            ink(&mut rng),
        ));
    }
    let bar_count = bars.len();
    let rule = rng.gen_bool(0.4).then_some(margin_x * 0.6);

    // Soft edges: each pixel integrates over a footprint slightly wider than
    // itself.
    let half = 0.5 * (s / 128.0).max(1.0) + 0.25;
    let mut data = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        let py = r as f64;
        for c in 0..size {
            let px = c as f64;
            let mut color = [PAGE_LUMA; 3];
            if let Some(rx) = rule {
                let a = coverage(px, half, rx - 0.5, rx + 0.5) as f32 * 0.6;
                let rule_color = [0.85f32, 0.45, 0.45];
                for ch in 0..3 {
                    color[ch] += a * (rule_color[ch] - color[ch]);
                }
            }
            for (rect, col) in &bars {
                let a = (coverage(px, half, rect.x0, rect.x1) * coverage(py, half, rect.y0, rect.y1)) as f32;
                if a > 0.0 {
                    for ch in 0..3 {
                        color[ch] += a * (col[ch] - color[ch]);
                    }
                }
            }
            data.extend_from_slice(&color);
        }
    }
    (
        Image::new(size, size, 3, data).expect("consistent extents"),
        bar_count,
    )
}

pub fn make_flat_document(seed: u64, size: usize) -> Image {
    make_flat_document_with_bars(seed, size).0
}

/// One random dataset sample.
pub fn generate_sample(seed: u64, size: usize, augment: &Augment) -> Result<WarpSample, SynthError> {
    let flat = make_flat_document(seed, size);
    let (field, inverse) = make_forward_field(seed, size)?;
    let mut sample = render_with_inverse(&flat, &field, &inverse);
    if *augment != Augment::default() {
        augment.apply(&mut sample.warped, seed);
        sample.gt_edges = canny(&sample.warped, &CannyParams::default());
    }
    Ok(sample)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecRanges {
    pub max_primitives: usize,
    pub amplitude: [f64; 2],
    pub width: [f64; 2],
    pub max_corner_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub spec_ranges: SpecRanges,
    pub augment: Augment,
    pub samples: Vec<String>,
}

pub fn sample_stem(index: usize) -> String {
    format!("{index:06}")
}

/// Writes `count` samples plus `manifest.json` into `dir`. The directory is
/// assembled under a temporary sibling name and renamed into place, so an
/// interrupted run leaves no partial dataset behind.
pub fn write_dataset(dir: &Path, count: usize, size: usize, seed: u64, augment: &Augment) -> Result<Manifest, SynthError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    if dir.exists() {
        return Err(SynthError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output directory already exists"),
        });
    }
    let tmp = crate::io::temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    let result = (|| {
        let mut samples = Vec::with_capacity(count);
        for i in 0..count {
            let stem = sample_stem(i);
            let s = generate_sample(sample_seed(seed, i as u64), size, augment)?;
            save_image(&s.warped, &tmp.join(format!("{stem}.warped.ppm")))?;
            save_image(&s.flat_source, &tmp.join(format!("{stem}.flat.ppm")))?;
            save_image(&s.gt_edges, &tmp.join(format!("{stem}.edges.pgm")))?;
            let grid_path = tmp.join(format!("{stem}.dgrid"));
            s.gt_grid.save(&grid_path).map_err(|e| SynthError::Io {
                path: grid_path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            samples.push(stem);
        }
        let manifest = Manifest {
            count,
            size,
            seed,
            spec_ranges: SpecRanges {
                max_primitives: MAX_PRIMITIVES,
                amplitude: [AMPLITUDE_RANGE.0, AMPLITUDE_RANGE.1],
                width: [WIDTH_RANGE.0, WIDTH_RANGE.1],
                max_corner_offset: MAX_CORNER_OFFSET,
            },
            augment: *augment,
            samples,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let path = tmp.join("manifest.json");
        fs::write(&path, json).map_err(io_err(&path))?;
        fs::rename(&tmp, dir).map_err(io_err(dir))?;
        Ok(manifest)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}
