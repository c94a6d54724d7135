use std::sync::Arc;

use super::{cast, expect_same_shape, Element, Result, Tape, Tensor, TensorError};

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<E: Element>(self, x: E) -> E {
        match self {
            Activation::Relu => x.max(E::zero()),
            Activation::Sigmoid => {
                if x >= E::zero() {
                    E::one() / (E::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (E::one() + e)
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<E: Element>(self, x: E, y: E) -> E {
        match self {
            Activation::Relu => {
                if x > E::zero() {
                    E::one()
                } else {
                    E::zero()
                }
            }
            Activation::Sigmoid => y * (E::one() - y),
            Activation::Tanh => E::one() - y * y,
        }
    }
}

impl<E: Element> Tape<E> {
    pub fn activation(&mut self, x: &Tensor<E>, kind: Activation) -> Result<Tensor<E>> {
        let p = self.parent(x)?;
        let out: Vec<E> = x.data().iter().map(|&v| kind.apply(v)).collect();
        let xs = Arc::clone(x.storage());
        let ys = Arc::new(out.clone());
        Ok(self.record(x.shape().to_vec(), out, &[p], move |g, sink| {
            if let Some(p) = p {
                let slot = sink.slot(p);
                for i in 0..slot.len() {
                    slot[i] = slot[i] + g[i] * kind.derivative(xs[i], ys[i]);
                }
            }
        }))
    }

    pub fn relu(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.activation(x, Activation::Tanh)
    }

    pub fn add(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        expect_same_shape("add", a.shape(), b.shape())?;
        let (pa, pb) = (self.parent(a)?, self.parent(b)?);
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.record(a.shape().to_vec(), out, &[pa, pb], move |g, sink| {
            if let Some(p) = pa {
                sink.add(p, g);
            }
            if let Some(p) = pb {
                sink.add(p, g);
            }
        }))
    }

    pub fn mul(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        expect_same_shape("mul", a.shape(), b.shape())?;
        let (pa, pb) = (self.parent(a)?, self.parent(b)?);
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let (sa, sb) = (Arc::clone(a.storage()), Arc::clone(b.storage()));
        Ok(self.record(a.shape().to_vec(), out, &[pa, pb], move |g, sink| {
            if let Some(p) = pa {
                let slot = sink.slot(p);
                for i in 0..slot.len() {
                    slot[i] = slot[i] + g[i] * sb[i];
                }
            }
            if let Some(p) = pb {
                let slot = sink.slot(p);
                for i in 0..slot.len() {
                    slot[i] = slot[i] + g[i] * sa[i];
                }
            }
        }))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: &Tensor<E>, factor: f64) -> Result<Tensor<E>> {
        let p = self.parent(x)?;
        let c: E = cast(factor);
        let out = x.data().iter().map(|&v| v * c).collect();
        Ok(self.record(x.shape().to_vec(), out, &[p], move |g, sink| {
            if let Some(p) = p {
                let slot = sink.slot(p);
                for i in 0..slot.len() {
                    slot[i] = slot[i] + g[i] * c;
                }
            }
        }))
    }

    pub fn sum(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let p = self.parent(x)?;
        let total: f64 = x.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
        Ok(self.record(vec![1], vec![cast(total)], &[p], move |g, sink| {
            if let Some(p) = p {
                let slot = sink.slot(p);
                for s in slot.iter_mut() {
                    *s = *s + g[0];
                }
            }
        }))
    }

    pub fn mean(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let n = x.numel();
        if n == 0 {
            return Err(TensorError::Contract {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s = self.sum(x)?;
        self.scale(&s, 1.0 / n as f64)
    }

    /// `stream ⊙ (1 + alpha)` where `alpha` is a one-channel map broadcast
    /// over the channels of `stream`.
    pub fn gate_scale(&mut self, stream: &Tensor<E>, alpha: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c, h, w) = stream.dims4("gate_scale")?;
        let (an, ac, ah, aw) = alpha.dims4("gate_scale")?;
        expect_same_shape("gate_scale", &[n, 1, h, w], &[an, ac, ah, aw])?;
        let (ps, pa) = (self.parent(stream)?, self.parent(alpha)?);
        let hw = h * w;
        let sd = stream.data();
        let ad = alpha.data();
        let mut out = vec![E::zero(); sd.len()];
        for b in 0..n {
            let a = &ad[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    out[base + i] = sd[base + i] * (E::one() + a[i]);
                }
            }
        }
        let (ss, sa) = (Arc::clone(stream.storage()), Arc::clone(alpha.storage()));
        Ok(self.record(
            stream.shape().to_vec(),
            out,
            &[ps, pa],
            move |g, sink| {
                if let Some(p) = ps {
                    let slot = sink.slot(p);
                    for b in 0..n {
                        let a = &sa[b * hw..(b + 1) * hw];
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for i in 0..hw {
                                slot[base + i] = slot[base + i] + g[base + i] * (E::one() + a[i]);
                            }
                        }
                    }
                }
                if let Some(p) = pa {
                    let slot = sink.slot(p);
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for i in 0..hw {
                                slot[b * hw + i] = slot[b * hw + i] + g[base + i] * ss[base + i];
                            }
                        }
                    }
                }
            },
        ))
    }
}
