//! Rectification quality: SSIM, MS-SSIM and local distortion measured by
//! pyramid block matching.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::resize_image;
use crate::image::Image;
use crate::io::load_image;

/// Pixel area that MS-SSIM and LD inputs are rescaled to (880 × 680).
pub const PROTOCOL_AREA: f64 = 598_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    Dim { a: (usize, usize), b: (usize, usize) },
    #[error("{what} needs images of at least {min}×{min} pixels, got {width}×{height}")]
    TooSmall {
        what: &'static str,
        min: usize,
        width: usize,
        height: usize,
    },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    /// Per-scale exponents, finest first; renormalized to sum to one.
    pub weights: Vec<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(format!("window must be odd and positive, got {}", self.window));
        }
        if !(self.sigma > 0.0) || !(self.data_range > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err("sigma, data_range, k1 and k2 must be positive".into());
        }
        if self.weights.is_empty() || self.weights.iter().any(|&w| !(w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err("weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let k: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - half;
                (-x * x / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    fn normalized_weights(&self) -> Vec<f64> {
        let s: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / s).collect()
    }

    /// Smallest extent accepted by [`ms_ssim`].
    pub fn ms_ssim_min_extent(&self) -> usize {
        self.window << (self.weights.len() - 1)
    }
}

/// Grayscale `f64` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn from_image(image: &Image) -> Self {
        let l = image.luminance();
        Self {
            width: l.width(),
            height: l.height(),
            data: l.data().iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// 2×2 box average followed by decimation (odd trailing rows and
    /// columns are dropped).
    pub fn downsample2(&self) -> Gray {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let (r2, c2) = (2 * r, 2 * c);
                data.push(0.25 * (self.at(r2, c2) + self.at(r2, c2 + 1) + self.at(r2 + 1, c2) + self.at(r2 + 1, c2 + 1)));
            }
        }
        Gray { width: w, height: h, data }
    }

    /// Separable "valid" correlation with a symmetric kernel.
    fn filter_valid(&self, k: &[f64]) -> Gray {
        let n = k.len();
        let (w1, h1) = (self.width + 1 - n, self.height + 1 - n);
        let mut tmp = vec![0.0; w1 * self.height];
        for r in 0..self.height {
            let row = &self.data[r * self.width..][..self.width];
            for c in 0..w1 {
                tmp[r * w1 + c] = row[c..c + n].iter().zip(k).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; w1 * h1];
        for r in 0..h1 {
            for (i, &kv) in k.iter().enumerate() {
                let src = &tmp[(r + i) * w1..][..w1];
                for (o, &v) in out[r * w1..][..w1].iter_mut().zip(src) {
                    *o += kv * v;
                }
            }
        }
        Gray {
            width: w1,
            height: h1,
            data: out,
        }
    }

    fn zip_map(&self, other: &Gray, f: impl Fn(f64, f64) -> f64) -> Gray {
        Gray {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        }
    }
}

fn check_same(a: &Gray, b: &Gray) -> Result<(), MetricsError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::Dim {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    Ok(())
}

/// Mean SSIM and mean contrast-structure term over the valid window positions.
fn ssim_cs(a: &Gray, b: &Gray, p: &SsimParams) -> (f64, f64) {
    let k = p.kernel();
    let mu_a = a.filter_valid(&k);
    let mu_b = b.filter_valid(&k);
    let aa = a.zip_map(a, |x, y| x * y).filter_valid(&k);
    let bb = b.zip_map(b, |x, y| x * y).filter_valid(&k);
    let ab = a.zip_map(b, |x, y| x * y).filter_valid(&k);
    let (c1, c2) = (p.c1(), p.c2());
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let contrast = (2.0 * cov + c2) / (va + vb + c2);
        let luminance = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += contrast;
        ssim += luminance * contrast;
    }
    let n = mu_a.data.len() as f64;
    (ssim / n, cs / n)
}

pub fn ssim_gray(a: &Gray, b: &Gray, p: &SsimParams) -> Result<f64, MetricsError> {
    check_same(a, b)?;
    if a.width < p.window || a.height < p.window {
        return Err(MetricsError::TooSmall {
            what: "SSIM",
            min: p.window,
            width: a.width,
            height: a.height,
        });
    }
    Ok(ssim_cs(a, b, p).0)
}

/// Mean structural similarity of the luminance of two same-size images.
pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64, MetricsError> {
    ssim_gray(&Gray::from_image(a), &Gray::from_image(b), p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsim {
    pub value: f64,
    /// Mean contrast-structure term per scale, finest first.
    pub cs: Vec<f64>,
    /// Mean SSIM per scale, finest first.
    pub ssim: Vec<f64>,
    /// Extents `(width, height)` per scale.
    pub extents: Vec<(usize, usize)>,
}

/// Multi-scale SSIM: contrast-structure terms at every scale and the
/// luminance term at the coarsest one, each raised to its weight. Negative
/// terms are clamped to zero before exponentiation.
pub fn ms_ssim_detail(a: &Image, b: &Image, p: &SsimParams) -> Result<MsSsim, MetricsError> {
    let (mut ga, mut gb) = (Gray::from_image(a), Gray::from_image(b));
    check_same(&ga, &gb)?;
    let min = p.ms_ssim_min_extent();
    if ga.width < min || ga.height < min {
        return Err(MetricsError::TooSmall {
            what: "MS-SSIM",
            min,
            width: ga.width,
            height: ga.height,
        });
    }
    let weights = p.normalized_weights();
    let mut out = MsSsim {
        value: 1.0,
        cs: vec![],
        ssim: vec![],
        extents: vec![],
    };
    for (j, &wt) in weights.iter().enumerate() {
        if j > 0 {
            ga = ga.downsample2();
            gb = gb.downsample2();
        }
        let (s, cs) = ssim_cs(&ga, &gb, p);
        out.extents.push((ga.width, ga.height));
        out.ssim.push(s);
        out.cs.push(cs);
        let term = if j + 1 == weights.len() { s } else { cs };
        out.value *= term.max(0.0).powf(wt);
    }
    Ok(out)
}

pub fn ms_ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64, MetricsError> {
    Ok(ms_ssim_detail(a, b, p)?.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdParams {
    pub levels: usize,
    pub patch: usize,
    /// Search radius in pixels at every level.
    pub radius: usize,
    /// Spacing of matched patches.
    pub stride: usize,
    /// Patches of the reference with lower variance get zero flow.
    pub min_variance: f64,
}

impl Default for LdParams {
    fn default() -> Self {
        Self {
            levels: 4,
            patch: 16,
            radius: 8,
            stride: 8,
            min_variance: 1e-6,
        }
    }
}

impl LdParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.levels == 0 || self.patch < 2 || self.stride == 0 {
            return Err("levels, stride must be positive and patch at least 2".into());
        }
        Ok(())
    }
}

/// Flow sampled at patch centres of a regular lattice.
#[derive(Clone, Debug)]
pub struct BlockFlow {
    /// Patch top-left coordinates along each axis.
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub patch: usize,
    /// `(dx, dy)` per patch, row-major.
    pub flow: Vec<[f64; 2]>,
}

fn lattice(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().expect("non-empty") != last {
        v.push(last);
    }
    v
}

/// Linear interpolation weights of `pos` between sorted `centres`, clamped.
fn bracket(centres: &[f64], pos: f64) -> (usize, usize, f64) {
    if centres.len() == 1 || pos <= centres[0] {
        return (0, 0, 0.0);
    }
    let n = centres.len();
    if pos >= centres[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let i = centres.partition_point(|&c| c <= pos) - 1;
    let t = (pos - centres[i]) / (centres[i + 1] - centres[i]);
    (i, i + 1, t)
}

impl BlockFlow {
    fn centres(v: &[usize], patch: usize) -> Vec<f64> {
        v.iter().map(|&t| t as f64 + (patch as f64 - 1.0) / 2.0).collect()
    }

    /// Bilinear interpolation of the lattice flow at pixel `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        let (r0, r1, ty) = bracket(&Self::centres(&self.rows, self.patch), y);
        let (c0, c1, tx) = bracket(&Self::centres(&self.cols, self.patch), x);
        let n = self.cols.len();
        let f = |r: usize, c: usize| self.flow[r * n + c];
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let top = f(r0, c0)[k] * (1.0 - tx) + f(r0, c1)[k] * tx;
            let bottom = f(r1, c0)[k] * (1.0 - tx) + f(r1, c1)[k] * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }

    /// Per-pixel flow over a `width × height` image.
    pub fn dense(&self, width: usize, height: usize) -> Vec<[f64; 2]> {
        let rc = Self::centres(&self.rows, self.patch);
        let cc = Self::centres(&self.cols, self.patch);
        let cols: Vec<_> = (0..width).map(|x| bracket(&cc, x as f64)).collect();
        let n = self.cols.len();
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let (r0, r1, ty) = bracket(&rc, y as f64);
            for &(c0, c1, tx) in &cols {
                let f = |r: usize, c: usize| self.flow[r * n + c];
                let mut v = [0.0; 2];
                for (k, o) in v.iter_mut().enumerate() {
                    let top = f(r0, c0)[k] * (1.0 - tx) + f(r0, c1)[k] * tx;
                    let bottom = f(r1, c0)[k] * (1.0 - tx) + f(r1, c1)[k] * tx;
                    *o = top * (1.0 - ty) + bottom * ty;
                }
                out.push(v);
            }
        }
        out
    }
}

fn patch_variance(g: &Gray, top: usize, left: usize, n: usize) -> f64 {
    let (mut s, mut sq) = (0.0, 0.0);
    for r in top..top + n {
        for &v in &g.data[r * g.width + left..][..n] {
            s += v;
            sq += v * v;
        }
    }
    let m = (n * n) as f64;
    sq / m - (s / m).powi(2)
}

/// Mean absolute difference between the reference patch at `at` and the
/// patch of `b` at `bt`, over the part of the latter that lies inside `b`.
fn mad(a: &Gray, at: (usize, usize), b: &Gray, bt: (isize, isize), n: usize) -> f64 {
    let rows = bt.0.max(0)..(bt.0 + n as isize).min(b.height as isize);
    let cols = bt.1.max(0)..(bt.1 + n as isize).min(b.width as isize);
    let mut s = 0.0;
    for r in rows.clone() {
        let ra = &a.data[(at.0 as isize + r - bt.0) as usize * a.width..];
        let rb = &b.data[r as usize * b.width..];
        for c in cols.clone() {
            s += (ra[(at.1 as isize + c - bt.1) as usize] - rb[c as usize]).abs();
        }
    }
    s / (rows.len() * cols.len()) as f64
}

/// For each reference patch, the displacement `(dx, dy)` into `moving` with
/// the lowest absolute difference, searched within `radius` of the (rounded)
/// prior. Candidates may hang over the image border by up to half a patch;
/// they are scored on the overlap only. Ties prefer the shorter displacement.
fn match_level(reference: &Gray, moving: &Gray, p: &LdParams, prior: Option<&BlockFlow>) -> BlockFlow {
    let rows = lattice(reference.height, p.patch, p.stride);
    let cols = lattice(reference.width, p.patch, p.stride);
    let half = (p.patch as f64 - 1.0) / 2.0;
    let radius = p.radius as isize;
    let n = p.patch as isize;
    let overhang = n / 2;
    let (h, w) = (moving.height as isize, moving.width as isize);
    let flow: Vec<[f64; 2]> = rows
        .par_iter()
        .flat_map_iter(|&top| {
            cols.iter().map(move |&left| (top, left)).collect::<Vec<_>>()
        })
        .map(|(top, left)| {
            if patch_variance(reference, top, left, p.patch) < p.min_variance {
                return [0.0, 0.0];
            }
            let base = prior.map_or([0isize, 0], |pr| {
                let f = pr.sample((left as f64 + half) / 2.0, (top as f64 + half) / 2.0);
                [(2.0 * f[0]).round() as isize, (2.0 * f[1]).round() as isize]
            });
            let mut best: Option<(f64, isize, [isize; 2])> = None;
            for dy in base[1] - radius..=base[1] + radius {
                for dx in base[0] - radius..=base[0] + radius {
                    let (y, x) = (top as isize + dy, left as isize + dx);
                    if y < -overhang || x < -overhang || y + n - overhang > h || x + n - overhang > w {
                        continue;
                    }
                    let cost = mad(reference, (top, left), moving, (y, x), p.patch);
                    let len = dx * dx + dy * dy;
                    let better = match best {
                        None => true,
                        Some((c, l, _)) => cost < c || (cost == c && len < l),
                    };
                    if better {
                        best = Some((cost, len, [dx, dy]));
                    }
                }
            }
            best.map_or([0.0, 0.0], |(_, _, d)| [d[0] as f64, d[1] as f64])
        })
        .collect();
    BlockFlow {
        rows,
        cols,
        patch: p.patch,
        flow,
    }
}

/// Coarse-to-fine flow registering `reference` patches onto `moving`.
pub fn block_flow(moving: &Gray, reference: &Gray, p: &LdParams) -> Result<BlockFlow, MetricsError> {
    check_same(moving, reference)?;
    if reference.width < p.patch || reference.height < p.patch {
        return Err(MetricsError::TooSmall {
            what: "local distortion",
            min: p.patch,
            width: reference.width,
            height: reference.height,
        });
    }
    let mut pyramid = vec![(moving.clone(), reference.clone())];
    while pyramid.len() < p.levels {
        let (m, r) = pyramid.last().expect("non-empty");
        if m.width / 2 < p.patch || m.height / 2 < p.patch {
            break;
        }
        let next = (m.downsample2(), r.downsample2());
        pyramid.push(next);
    }
    let mut flow: Option<BlockFlow> = None;
    for (m, r) in pyramid.iter().rev() {
        flow = Some(match_level(r, m, p, flow.as_ref()));
    }
    Ok(flow.expect("at least one level"))
}

/// Mean per-pixel flow magnitude between a rectified image and its
/// ground-truth scan, in pixels.
pub fn local_distortion(rectified: &Image, scan: &Image, p: &LdParams) -> Result<f64, MetricsError> {
    let (m, r) = (Gray::from_image(rectified), Gray::from_image(scan));
    let flow = block_flow(&m, &r, p)?;
    let dense = flow.dense(r.width, r.height);
    Ok(dense.iter().map(|v| v[0].hypot(v[1])).sum::<f64>() / dense.len() as f64)
}

/// Aspect-preserving extent whose area is about [`PROTOCOL_AREA`], both
/// sides rounded to even.
pub fn protocol_extent(width: usize, height: usize) -> (usize, usize) {
    let s = (PROTOCOL_AREA / (width * height) as f64).sqrt();
    let even = |v: f64| (2.0 * (v / 2.0).round()).max(2.0) as usize;
    (even(width as f64 * s), even(height as f64 * s))
}

pub fn rescale_to_protocol(image: &Image) -> Image {
    let (w, h) = protocol_extent(image.width(), image.height());
    resize_image(image, h, w)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ssim: SsimParams,
    pub ld: LdParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub name: String,
    /// SSIM at the scan's resolution.
    pub ssim: f64,
    pub ms_ssim: f64,
    pub ld: f64,
    pub ms_ssim_cs: Vec<f64>,
    pub protocol_extent: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub name: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub failures: Vec<EvalFailure>,
    pub mean_ssim: f64,
    pub mean_ms_ssim: f64,
    pub mean_ld: f64,
    pub protocol: String,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,ssim,ms_ssim,ld\n");
        for it in &self.items {
            s.push_str(&format!("{},{},{},{}\n", it.name, it.ssim, it.ms_ssim, it.ld));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "evaluated {} pair(s), {} failed\nmean ssim    {:.6}\nmean ms_ssim {:.6}\nmean ld      {:.4} px\n{}\n",
            self.items.len(),
            self.failures.len(),
            self.mean_ssim,
            self.mean_ms_ssim,
            self.mean_ld,
            self.protocol
        );
        for f in &self.failures {
            s.push_str(&format!("failed {}: {}\n", f.name, f.error));
        }
        s
    }
}

/// One rectified/scan pair; either image may have failed to load.
pub struct EvalPair {
    pub name: String,
    pub rectified: Result<Image, String>,
    pub scan: Result<Image, String>,
}

impl EvalPair {
    pub fn from_images(name: impl Into<String>, rectified: Image, scan: Image) -> Self {
        Self {
            name: name.into(),
            rectified: Ok(rectified),
            scan: Ok(scan),
        }
    }

    pub fn load(name: impl Into<String>, rectified: &Path, scan: &Path) -> Self {
        Self {
            name: name.into(),
            rectified: load_image(rectified).map_err(|e| e.to_string()),
            scan: load_image(scan).map_err(|e| e.to_string()),
        }
    }
}

fn evaluate_pair(pair: &EvalPair, cfg: &MetricsConfig) -> Result<EvalItem, String> {
    let rectified = pair.rectified.as_ref().map_err(Clone::clone)?;
    let scan = pair.scan.as_ref().map_err(Clone::clone)?;
    let rectified = if rectified.same_size(scan) {
        rectified.clone()
    } else {
        resize_image(rectified, scan.height(), scan.width())
    };
    let s = ssim(&rectified, scan, &cfg.ssim).map_err(|e| e.to_string())?;
    let (w, h) = protocol_extent(scan.width(), scan.height());
    let (pr, ps) = (resize_image(&rectified, h, w), resize_image(scan, h, w));
    let ms = ms_ssim_detail(&pr, &ps, &cfg.ssim).map_err(|e| e.to_string())?;
    let ld = local_distortion(&pr, &ps, &cfg.ld).map_err(|e| e.to_string())?;
    Ok(EvalItem {
        name: pair.name.clone(),
        ssim: s,
        ms_ssim: ms.value,
        ld,
        ms_ssim_cs: ms.cs,
        protocol_extent: (w, h),
    })
}

/// Scores every pair. SSIM is taken at the scan's resolution (the rectified
/// image is resized to it when they differ); MS-SSIM and LD after rescaling
/// both to the protocol area. Failed pairs are reported and left out of the
/// means.
pub fn evaluate(pairs: &[EvalPair], cfg: &MetricsConfig) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let results: Vec<_> = pairs.par_iter().map(|p| evaluate_pair(p, cfg)).collect();
    let mut items = vec![];
    let mut failures = vec![];
    for (pair, r) in pairs.iter().zip(results) {
        match r {
            Ok(it) => items.push(it),
            Err(error) => {
                log::warn!("skipping {}: {error}", pair.name);
                failures.push(EvalFailure {
                    name: pair.name.clone(),
                    error,
                });
            }
        }
    }
    let mean = |f: fn(&EvalItem) -> f64| {
        if items.is_empty() {
            f64::NAN
        } else {
            items.iter().map(f).sum::<f64>() / items.len() as f64
        }
    };
    Ok(EvalReport {
        mean_ssim: mean(|i| i.ssim),
        mean_ms_ssim: mean(|i| i.ms_ssim),
        mean_ld: mean(|i| i.ld),
        protocol: format!(
            "ms_ssim and ld at an aspect-preserving rescale to ~{} px area (880x680); ssim at scan resolution",
            PROTOCOL_AREA
        ),
        items,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_extent_examples() {
        assert_eq!(protocol_extent(1000, 800), (864, 692));
        assert_eq!(protocol_extent(880, 680), (880, 680));
    }

    #[test]
    fn downsample_chain_to_scale_five() {
        let mut g = Gray {
            width: 880,
            height: 680,
            data: vec![0.0; 880 * 680],
        };
        for _ in 0..4 {
            g = g.downsample2();
        }
        assert_eq!((g.width, g.height), (55, 42));
    }

    #[test]
    fn lattice_covers_the_far_edge() {
        assert_eq!(lattice(40, 16, 8), vec![0, 8, 16, 24]);
        assert_eq!(lattice(42, 16, 8), vec![0, 8, 16, 24, 26]);
        assert_eq!(lattice(16, 16, 8), vec![0]);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        assert_eq!(evaluate(&[], &MetricsConfig::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn ms_ssim_rejects_small_images() {
        let a = Image::filled(100, 200, &[0.5]);
        let e = ms_ssim(&a, &a, &SsimParams::default()).unwrap_err();
        assert!(e.to_string().contains("176"));
    }
}
