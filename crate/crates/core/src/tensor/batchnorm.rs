use std::sync::Arc;

use super::{cast, Element, Result, Tape, Tensor, TensorError};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel running mean and variance used in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<E: Element = f32> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

impl<E: Element> RunningStats<E> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![E::zero(); channels],
            var: vec![E::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<F: Element>(&self) -> RunningStats<F> {
        let conv = |v: &Vec<E>| v.iter().map(|x| cast::<F>(x.to_f64().unwrap_or(0.0))).collect();
        RunningStats {
            mean: conv(&self.mean),
            var: conv(&self.var),
        }
    }
}

impl<E: Element> Tape<E> {
    /// Batch normalization over (N, H, W) per channel followed by the affine
    /// `gamma·x̂ + beta`. Training mode uses batch statistics and updates
    /// `stats`; evaluation mode normalizes with `stats`.
    pub fn batch_norm(
        &mut self,
        input: &Tensor<E>,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        stats: &mut RunningStats<E>,
        training: bool,
    ) -> Result<Tensor<E>> {
        const OP: &str = "batch_norm";
        let (n, c, h, w) = input.dims4(OP)?;
        for (axis, got) in [
            ("gamma", gamma.numel()),
            ("beta", beta.numel()),
            ("running stats", stats.channels()),
        ] {
            if got != c {
                return Err(TensorError::Dim {
                    op: OP,
                    axis,
                    expected: c,
                    got,
                });
            }
        }
        let parents = [self.parent(input)?, self.parent(gamma)?, self.parent(beta)?];
        let hw = h * w;
        let count = n * hw;
        let x = input.data();
        let (gd, bd) = (gamma.data(), beta.data());

        let mut xhat = vec![E::zero(); x.len()];
        let mut inv_std = vec![E::zero(); c];
        for ch in 0..c {
            let (mean, var) = if training {
                let mut sum = 0.0f64;
                for b in 0..n {
                    for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        sum += v.to_f64().unwrap_or(f64::NAN);
                    }
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        let d = v.to_f64().unwrap_or(f64::NAN) - mean;
                        sq += d * d;
                    }
                }
                let var = sq / count as f64;
                let unbiased = if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                };
                let m: E = cast(BN_MOMENTUM);
                let one_m: E = cast(1.0 - BN_MOMENTUM);
                stats.mean[ch] = m * stats.mean[ch] + one_m * cast(mean);
                stats.var[ch] = m * stats.var[ch] + one_m * cast(unbiased);
                (mean, var)
            } else {
                (
                    stats.mean[ch].to_f64().unwrap_or(0.0),
                    stats.var[ch].to_f64().unwrap_or(1.0),
                )
            };
            let inv = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = cast(inv);
            let mean_e: E = cast(mean);
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    xhat[i] = (x[i] - mean_e) * inv_std[ch];
                }
            }
        }
        let mut out = vec![E::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    out[i] = gd[ch] * xhat[i] + bd[ch];
                }
            }
        }

        let xhat = Arc::new(xhat);
        let gs = Arc::clone(gamma.storage());
        let [px, pg, pb] = parents;
        Ok(self.record(input.shape().to_vec(), out, &parents, move |g, sink| {
            let mut sum_dy = vec![E::zero(); c];
            let mut sum_dy_xhat = vec![E::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                        sum_dy[ch] = sum_dy[ch] + g[i];
                        sum_dy_xhat[ch] = sum_dy_xhat[ch] + g[i] * xhat[i];
                    }
                }
            }
            if let Some(p) = pg {
                sink.add(p, &sum_dy_xhat);
            }
            if let Some(p) = pb {
                sink.add(p, &sum_dy);
            }
            if let Some(p) = px {
                let slot = sink.slot(p);
                let m: E = cast(count as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let k = gs[ch] * inv_std[ch];
                        for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                            let d = if training {
                                k * (m * g[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]) / m
                            } else {
                                k * g[i]
                            };
                            slot[i] = slot[i] + d;
                        }
                    }
                }
            }
        }))
    }
}
