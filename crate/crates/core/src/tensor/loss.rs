use std::sync::Arc;

use super::{cast, Element, Result, Tape, Tensor, TensorError};

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the
/// logarithm.
pub const BCE_CLAMP: f64 = 1e-7;

impl<E: Element> Tape<E> {
    /// Mean binary cross-entropy between probabilities `pred` and constant
    /// targets `target` (same length, row-major).
    pub fn binary_cross_entropy(&mut self, pred: &Tensor<E>, target: &[E]) -> Result<Tensor<E>> {
        if target.len() != pred.numel() {
            return Err(TensorError::Dim {
                op: "binary_cross_entropy",
                axis: "element",
                expected: pred.numel(),
                got: target.len(),
            });
        }
        let p = self.parent(pred)?;
        let count = pred.numel().max(1) as f64;
        let mut total = 0.0f64;
        for (&yh, &y) in pred.data().iter().zip(target) {
            let q = yh.to_f64().unwrap_or(f64::NAN).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = y.to_f64().unwrap_or(f64::NAN);
            total += y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        }
        let loss = -total / count;
        let preds = Arc::clone(pred.storage());
        let target = target.to_vec();
        Ok(self.record(vec![1], vec![cast(loss)], &[p], move |g, sink| {
            if let Some(p) = p {
                let slot = sink.slot(p);
                let scale = g[0].to_f64().unwrap_or(0.0) / count;
                for i in 0..slot.len() {
                    let q = preds[i].to_f64().unwrap_or(f64::NAN).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let y = target[i].to_f64().unwrap_or(f64::NAN);
                    let d = -(y / q - (1.0 - y) / (1.0 - q)) * scale;
                    slot[i] = slot[i] + cast(d);
                }
            }
        }))
    }

    /// Mean over all elements of `w(i, j)·(pred − target)²`, where the
    /// spatial weight map `weights` (H×W) is shared by every batch item and
    /// channel.
    pub fn weighted_mse(
        &mut self,
        pred: &Tensor<E>,
        target: &[E],
        weights: &[E],
    ) -> Result<Tensor<E>> {
        const OP: &str = "weighted_mse";
        let (_, _, h, w) = pred.dims4(OP)?;
        if target.len() != pred.numel() {
            return Err(TensorError::Dim {
                op: OP,
                axis: "element",
                expected: pred.numel(),
                got: target.len(),
            });
        }
        if weights.len() != h * w {
            return Err(TensorError::Dim {
                op: OP,
                axis: "weight map",
                expected: h * w,
                got: weights.len(),
            });
        }
        let p = self.parent(pred)?;
        let hw = h * w;
        let count = pred.numel().max(1) as f64;
        let mut total = 0.0f64;
        for (i, (&a, &b)) in pred.data().iter().zip(target).enumerate() {
            let d = (a - b).to_f64().unwrap_or(f64::NAN);
            total += weights[i % hw].to_f64().unwrap_or(f64::NAN) * d * d;
        }
        let preds = Arc::clone(pred.storage());
        let target = target.to_vec();
        let weights = weights.to_vec();
        Ok(self.record(vec![1], vec![cast(total / count)], &[p], move |g, sink| {
            if let Some(p) = p {
                let slot = sink.slot(p);
                let k: E = cast(2.0 * g[0].to_f64().unwrap_or(0.0) / count);
                for i in 0..slot.len() {
                    slot[i] = slot[i] + k * weights[i % hw] * (preds[i] - target[i]);
                }
            }
        }))
    }
}
