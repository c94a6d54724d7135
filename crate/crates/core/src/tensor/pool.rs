use super::{Element, Result, Tape, Tensor, TensorError};

impl<E: Element> Tape<E> {
    /// 2×2 max pooling with stride 2. Ties resolve to the first maximum in
    /// row-major window order, which also receives the whole gradient.
    pub fn max_pool2(&mut self, input: &Tensor<E>) -> Result<Tensor<E>> {
        const OP: &str = "max_pool2";
        let (n, c, h, w) = input.dims4(OP)?;
        for (axis, extent) in [("height", h), ("width", w)] {
            if extent % 2 != 0 || extent == 0 {
                return Err(TensorError::Dim {
                    op: OP,
                    axis,
                    expected: extent + extent % 2,
                    got: extent,
                });
            }
        }
        let p = self.parent(input)?;
        let (ho, wo) = (h / 2, w / 2);
        let x = input.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.record(vec![n, c, ho, wo], out, &[p], move |g, sink| {
            if let Some(p) = p {
                let slot = sink.slot(p);
                for (&src, &gv) in argmax.iter().zip(g) {
                    slot[src] = slot[src] + gv;
                }
            }
        }))
    }
}
