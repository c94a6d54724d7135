use super::{Element, Result, Tape, Tensor, TensorError};

impl<E: Element> Tape<E> {
    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
        const OP: &str = "concat_channels";
        let first = parts.first().ok_or_else(|| TensorError::Contract {
            op: OP,
            msg: "nothing to concatenate".into(),
        })?;
        let (n, _, h, w) = first.dims4(OP)?;
        let mut channels = Vec::with_capacity(parts.len());
        let mut parents = Vec::with_capacity(parts.len());
        for part in parts {
            let (pn, pc, ph, pw) = part.dims4(OP)?;
            for (axis, expected, got) in [("batch", n, pn), ("height", h, ph), ("width", w, pw)] {
                if expected != got {
                    return Err(TensorError::Dim {
                        op: OP,
                        axis,
                        expected,
                        got,
                    });
                }
            }
            channels.push(pc);
            parents.push(self.parent(part)?);
        }
        let hw = h * w;
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (part, &pc) in parts.iter().zip(&channels) {
                out.extend_from_slice(&part.data()[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let recorded = parents.clone();
        Ok(self.record(vec![n, total, h, w], out, &recorded, move |g, sink| {
            let mut offset = 0;
            for (&pc, p) in channels.iter().zip(&parents) {
                if let Some(p) = *p {
                    let slot = sink.slot(p);
                    for b in 0..n {
                        let src = &g[(b * total + offset) * hw..(b * total + offset + pc) * hw];
                        let dst = &mut slot[b * pc * hw..(b + 1) * pc * hw];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                }
                offset += pc;
            }
        }))
    }

    /// Splits a rank-4 tensor along the channel axis into consecutive groups.
    pub fn split_channels(&mut self, input: &Tensor<E>, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
        const OP: &str = "split_channels";
        let (n, c, h, w) = input.dims4(OP)?;
        let total: usize = sizes.iter().sum();
        if total != c {
            return Err(TensorError::Dim {
                op: OP,
                axis: "channel",
                expected: c,
                got: total,
            });
        }
        let p = self.parent(input)?;
        let hw = h * w;
        let x = input.data();
        let mut outputs = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &size in sizes {
            let mut out = Vec::with_capacity(n * size * hw);
            for b in 0..n {
                out.extend_from_slice(&x[(b * c + offset) * hw..(b * c + offset + size) * hw]);
            }
            let start = offset;
            outputs.push(self.record(vec![n, size, h, w], out, &[p], move |g, sink| {
                if let Some(p) = p {
                    let slot = sink.slot(p);
                    for b in 0..n {
                        let dst = &mut slot[(b * c + start) * hw..(b * c + start + size) * hw];
                        for (d, &v) in dst.iter_mut().zip(&g[b * size * hw..(b + 1) * size * hw]) {
                            *d = *d + v;
                        }
                    }
                }
            }));
            offset += size;
        }
        Ok(outputs)
    }
    /// Stacks rank-4 tensors with equal trailing dims along the batch axis.
    pub fn concat_batch(&mut self, parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
        const OP: &str = "concat_batch";
        let first = parts.first().ok_or_else(|| TensorError::Contract {
            op: OP,
            msg: "nothing to concatenate".into(),
        })?;
        let (_, c, h, w) = first.dims4(OP)?;
        let mut sizes = Vec::with_capacity(parts.len());
        let mut parents = Vec::with_capacity(parts.len());
        for part in parts {
            let (pn, pc, ph, pw) = part.dims4(OP)?;
            for (axis, expected, got) in [("channel", c, pc), ("height", h, ph), ("width", w, pw)] {
                if expected != got {
                    return Err(TensorError::Dim {
                        op: OP,
                        axis,
                        expected,
                        got,
                    });
                }
            }
            sizes.push(pn * c * h * w);
            parents.push(self.parent(part)?);
        }
        let n: usize = parts.iter().map(|p| p.shape()[0]).sum();
        let mut out = Vec::with_capacity(sizes.iter().sum());
        for part in parts {
            out.extend_from_slice(part.data());
        }
        let recorded = parents.clone();
        Ok(self.record(vec![n, c, h, w], out, &recorded, move |g, sink| {
            let mut offset = 0;
            for (&len, p) in sizes.iter().zip(&parents) {
                if let Some(p) = *p {
                    for (d, &v) in sink.slot(p).iter_mut().zip(&g[offset..offset + len]) {
                        *d = *d + v;
                    }
                }
                offset += len;
            }
        }))
    }

    /// Splits a rank-4 tensor along the batch axis into consecutive groups.
    pub fn split_batch(&mut self, input: &Tensor<E>, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
        const OP: &str = "split_batch";
        let (n, c, h, w) = input.dims4(OP)?;
        let total: usize = sizes.iter().sum();
        if total != n {
            return Err(TensorError::Dim {
                op: OP,
                axis: "batch",
                expected: n,
                got: total,
            });
        }
        let p = self.parent(input)?;
        let item = c * h * w;
        let mut outputs = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &size in sizes {
            let range = start * item..(start + size) * item;
            let out = input.data()[range.clone()].to_vec();
            outputs.push(self.record(vec![size, c, h, w], out, &[p], move |g, sink| {
                if let Some(p) = p {
                    for (d, &v) in sink.slot(p)[range.clone()].iter_mut().zip(g) {
                        *d = *d + v;
                    }
                }
            }));
            start += size;
        }
        Ok(outputs)
    }
}
