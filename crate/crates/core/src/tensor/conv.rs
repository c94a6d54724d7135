use std::sync::Arc;

use super::{Element, Result, Tape, Tensor, TensorError};

/// Weights and geometry of a 2-D convolution.
#[derive(Clone, Debug)]
pub struct ConvParams<E: Element = f32> {
    /// `[C_out, C_in, k, k]` with `k ∈ {1, 3}`.
    pub weight: Tensor<E>,
    /// `[C_out]`
    pub bias: Tensor<E>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn spatial_out(&self) -> usize {
        self.h_out * self.w_out
    }

    /// A 1×1, stride-1, unpadded convolution reads its input as the column
    /// matrix directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col<E: Element>(&self, x: &[E], col: &mut [E]) {
        let (k, s, p) = (self.k, self.stride, self.padding as isize);
        let hw_out = self.spatial_out();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..self.h_out {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * self.w_out..(oy + 1) * self.w_out];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(E::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= self.w as isize {
                                E::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<E: Element>(&self, col: &[E], dx: &mut [E]) {
        let (k, s, p) = (self.k, self.stride, self.padding as isize);
        let hw_out = self.spatial_out();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..self.h_out {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.w_out..(oy + 1) * self.w_out];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry<E: Element>(input: &Tensor<E>, params: &ConvParams<E>) -> Result<Geometry> {
    const OP: &str = "conv2d";
    let (_, c_in, h, w) = input.dims4(OP)?;
    let (c_out, wc_in, kh, kw) = params.weight.dims4(OP)?;
    if wc_in != c_in {
        return Err(TensorError::Dim {
            op: OP,
            axis: "channel",
            expected: wc_in,
            got: c_in,
        });
    }
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(TensorError::Contract {
            op: OP,
            msg: format!("kernel must be 1×1 or 3×3, got {kh}×{kw}"),
        });
    }
    if params.bias.shape() != [c_out] {
        return Err(TensorError::Dim {
            op: OP,
            axis: "bias",
            expected: c_out,
            got: params.bias.shape().first().copied().unwrap_or(0),
        });
    }
    if params.stride == 0 {
        return Err(TensorError::Contract {
            op: OP,
            msg: "stride must be positive".into(),
        });
    }
    let k = kh;
    let out_extent = |extent: usize, axis: &'static str| -> Result<usize> {
        let padded = extent + 2 * params.padding;
        if padded < k {
            return Err(TensorError::Dim {
                op: OP,
                axis,
                expected: k,
                got: padded,
            });
        }
        if !(padded - k).is_multiple_of(params.stride) {
            return Err(TensorError::Contract {
                op: OP,
                msg: format!(
                    "{axis}: padded extent {padded} minus kernel {k} not divisible by stride {}",
                    params.stride
                ),
            });
        }
        Ok((padded - k) / params.stride + 1)
    };
    Ok(Geometry {
        c_in,
        h,
        w,
        k,
        stride: params.stride,
        padding: params.padding,
        h_out: out_extent(h, "height")?,
        w_out: out_extent(w, "width")?,
    })
}

impl<E: Element> Tape<E> {
    /// Cross-correlation of `input` with the kernel, plus bias.
    pub fn conv2d(&mut self, input: &Tensor<E>, params: &ConvParams<E>) -> Result<Tensor<E>> {
        let geo = conv_geometry(input, params)?;
        let n = input.shape()[0];
        let c_out = params.weight.shape()[0];
        let (cols, hw_out) = (geo.cols(), geo.spatial_out());
        let in_plane = geo.c_in * geo.h * geo.w;

        let parents = [
            self.parent(input)?,
            self.parent(&params.weight)?,
            self.parent(&params.bias)?,
        ];

        let x = input.data();
        let wt = params.weight.data();
        let bias = params.bias.data();
        let mut out = vec![E::zero(); n * c_out * hw_out];
        let mut col = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![E::zero(); cols * hw_out]
        };
        for b in 0..n {
            let xb = &x[b * in_plane..(b + 1) * in_plane];
            let colb: &[E] = if geo.is_pointwise() {
                xb
            } else {
                geo.im2col(xb, &mut col);
                &col
            };
            let ob = &mut out[b * c_out * hw_out..(b + 1) * c_out * hw_out];
            E::gemm_raw(
                c_out,
                cols,
                hw_out,
                wt,
                (cols, 1),
                colb,
                (hw_out, 1),
                ob,
                (hw_out, 1),
                false,
            );
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut ob[co * hw_out..(co + 1) * hw_out] {
                    *v = *v + bv;
                }
            }
        }
        drop(col);

        let xs = Arc::clone(input.storage());
        let ws = Arc::clone(params.weight.storage());
        let [px, pw, pb] = parents;
        Ok(self.record(
            vec![n, c_out, geo.h_out, geo.w_out],
            out,
            &parents,
            move |g, sink| {
                let mut col = if geo.is_pointwise() || pw.is_none() {
                    Vec::new()
                } else {
                    vec![E::zero(); cols * hw_out]
                };
                let mut dcol = if px.is_some() {
                    vec![E::zero(); cols * hw_out]
                } else {
                    Vec::new()
                };
                for b in 0..n {
                    let gb = &g[b * c_out * hw_out..(b + 1) * c_out * hw_out];
                    if let Some(pb) = pb {
                        let slot = sink.slot(pb);
                        for (co, s) in slot.iter_mut().enumerate() {
                            let mut acc = E::zero();
                            for &v in &gb[co * hw_out..(co + 1) * hw_out] {
                                acc = acc + v;
                            }
                            *s = *s + acc;
                        }
                    }
                    if let Some(pw) = pw {
                        let xb = &xs[b * in_plane..(b + 1) * in_plane];
                        let colb: &[E] = if geo.is_pointwise() {
                            xb
                        } else {
                            geo.im2col(xb, &mut col);
                            &col
                        };
                        // dW += dOut · colᵀ
                        E::gemm_raw(
                            c_out,
                            hw_out,
                            cols,
                            gb,
                            (hw_out, 1),
                            colb,
                            (1, hw_out),
                            sink.slot(pw),
                            (cols, 1),
                            true,
                        );
                    }
                    if let Some(px) = px {
                        // dcol = Wᵀ · dOut
                        E::gemm_raw(
                            cols,
                            c_out,
                            hw_out,
                            &ws,
                            (1, cols),
                            gb,
                            (hw_out, 1),
                            &mut dcol,
                            (hw_out, 1),
                            false,
                        );
                        let dx = &mut sink.slot(px)[b * in_plane..(b + 1) * in_plane];
                        if geo.is_pointwise() {
                            for (d, &v) in dx.iter_mut().zip(&dcol) {
                                *d = *d + v;
                            }
                        } else {
                            geo.col2im(&dcol, dx);
                        }
                    }
                }
            },
        ))
    }
}
