//! The single bilinear kernel shared by tensor resizing, grid sampling and
//! image resizing.

/// Reads closer than this to an integer pixel position are treated as
/// integer-aligned, so identity grids reproduce their input exactly despite
/// the rounding of normalized `f32` coordinates.
pub const ALIGN_SNAP_PX: f64 = 1e-4;

/// Source position of output index `o` when resizing `input` samples to
/// `output` samples with corners aligned.
#[inline]
pub fn align_corners_source(o: usize, output: usize, input: usize) -> f64 {
    if output <= 1 || input <= 1 {
        0.0
    } else {
        o as f64 * (input - 1) as f64 / (output - 1) as f64
    }
}

/// Linear interpolation taps for continuous position `pos` along an axis of
/// `extent` samples, clamped to the border: `(i0, i1, t)` with the value
/// `(1 - t)·v[i0] + t·v[i1]`.
#[inline]
pub fn taps(pos: f64, extent: usize) -> (usize, usize, f64) {
    debug_assert!(extent > 0);
    let max = (extent - 1) as f64;
    let pos = if pos.is_nan() { 0.0 } else { pos.clamp(0.0, max) };
    let nearest = pos.round();
    if (pos - nearest).abs() < ALIGN_SNAP_PX {
        let i = nearest as usize;
        return (i, i, 0.0);
    }
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, pos - i0 as f64)
}

/// Converts a normalized coordinate in [-1, 1] (align-corners) to a pixel
/// position along an axis of `extent` samples.
#[inline]
pub fn denormalize(v: f64, extent: usize) -> f64 {
    (v + 1.0) * 0.5 * (extent.saturating_sub(1)) as f64
}

/// Inverse of [`denormalize`].
#[inline]
pub fn normalize(pos: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * pos / (extent - 1) as f64 - 1.0
    }
}

/// Per-output-index taps for an align-corners resize along one axis.
pub fn resize_taps(output: usize, input: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| taps(align_corners_source(o, output, input), input))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_corners_endpoints() {
        assert_eq!(align_corners_source(0, 4, 2), 0.0);
        assert_eq!(align_corners_source(3, 4, 2), 1.0);
        assert!((align_corners_source(1, 4, 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn taps_clamp_and_snap() {
        assert_eq!(taps(-3.0, 5), (0, 0, 0.0));
        assert_eq!(taps(9.0, 5), (4, 4, 0.0));
        assert_eq!(taps(2.00001, 5), (2, 2, 0.0));
        let (i0, i1, t) = taps(1.25, 5);
        assert_eq!((i0, i1), (1, 2));
        assert!((t - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalize_round_trip() {
        for e in [2usize, 7, 256] {
            for p in 0..e {
                let back = denormalize(normalize(p as f64, e), e);
                assert!((back - p as f64).abs() < 1e-9);
            }
        }
    }
}
