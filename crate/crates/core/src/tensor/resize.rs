use super::{cast, Element, Result, Tape, Tensor, TensorError};
use crate::interp::resize_taps;

impl<E: Element> Tape<E> {
    /// Bilinear resize of every (N, C) plane to `out_h × out_w`, corners
    /// aligned.
    pub fn resize_bilinear(
        &mut self,
        input: &Tensor<E>,
        out_h: usize,
        out_w: usize,
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = input.dims4("resize_bilinear")?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::Contract {
                op: "resize_bilinear",
                msg: format!("degenerate extents {h}×{w} -> {out_h}×{out_w}"),
            });
        }
        let p = self.parent(input)?;
        let ty: Vec<(usize, usize, E)> = resize_taps(out_h, h)
            .into_iter()
            .map(|(a, b, t)| (a, b, cast(t)))
            .collect();
        let tx: Vec<(usize, usize, E)> = resize_taps(out_w, w)
            .into_iter()
            .map(|(a, b, t)| (a, b, cast(t)))
            .collect();
        let x = input.data();
        let mut out = vec![E::zero(); n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                let row = &mut dst[oy * out_w..(oy + 1) * out_w];
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    row[ox] = top + (bottom - top) * fy;
                }
            }
        }
        Ok(self.record(vec![n, c, out_h, out_w], out, &[p], move |g, sink| {
            let Some(p) = p else { return };
            let slot = sink.slot(p);
            let one = E::one();
            for plane in 0..n * c {
                let gsrc = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                let dst = &mut slot[plane * h * w..(plane + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = gsrc[oy * out_w + ox];
                        let top = gv * (one - fy);
                        let bottom = gv * fy;
                        dst[y0 * w + x0] = dst[y0 * w + x0] + top * (one - fx);
                        dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                        dst[y1 * w + x0] = dst[y1 * w + x0] + bottom * (one - fx);
                        dst[y1 * w + x1] = dst[y1 * w + x1] + bottom * fx;
                    }
                }
            }
        }))
    }

    /// Doubles both spatial extents (align-corners bilinear).
    pub fn upsample_bilinear2(&mut self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let (_, _, h, w) = input.dims4("upsample_bilinear2")?;
        self.resize_bilinear(input, 2 * h, 2 * w)
    }
}
