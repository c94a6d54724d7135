use crate::tensor::{ConvParams, Element, Result, RunningStats, Tape, Tensor};

use super::params::{Init, ParamId, Registry, StatsId};

/// Gate behaviour of the gated convolutional layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateMode {
    #[default]
    Learned,
    /// Forces every gate to zero (ablation).
    Zero,
}

/// Everything a forward pass reads or updates.
pub struct Ctx<'a, E: Element = f32> {
    pub tape: &'a mut Tape<E>,
    pub(crate) params: &'a [Tensor<E>],
    pub(crate) stats: &'a mut [RunningStats<E>],
    pub training: bool,
    pub gate: GateMode,
}

impl<E: Element> Ctx<'_, E> {
    fn param(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0]
    }
}

/// Stride-1 "same" convolution with a 1×1 or 3×3 kernel.
#[derive(Clone, Debug)]
pub struct Conv {
    pub(crate) weight: ParamId,
    pub(crate) bias: ParamId,
    pub(crate) k: usize,
}

impl Conv {
    pub(crate) fn new(reg: &mut Registry, name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            weight: reg.param(
                format!("{name}.weight"),
                vec![c_out, c_in, k, k],
                Init::KaimingUniform { fan_in: c_in * k * k },
            ),
            bias: reg.param(format!("{name}.bias"), vec![c_out], Init::Zeros),
            k,
        }
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let p = ConvParams {
            weight: ctx.param(self.weight).clone(),
            bias: ctx.param(self.bias).clone(),
            stride: 1,
            padding: self.k / 2,
        };
        ctx.tape.conv2d(x, &p)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

impl BatchNorm {
    pub(crate) fn new(reg: &mut Registry, name: &str, channels: usize) -> Self {
        Self {
            gamma: reg.param(format!("{name}.gamma"), vec![channels], Init::Ones),
            beta: reg.param(format!("{name}.beta"), vec![channels], Init::Zeros),
            stats: reg.stats(name.to_string(), channels),
        }
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let gamma = ctx.params[self.gamma.0].clone();
        let beta = ctx.params[self.beta.0].clone();
        let training = ctx.training;
        ctx.tape
            .batch_norm(x, &gamma, &beta, &mut ctx.stats[self.stats.0], training)
    }
}

/// 3×3 conv → BN → ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBnRelu {
    pub(crate) fn new(reg: &mut Registry, name: &str, conv: &str, bn: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            conv: Conv::new(reg, &format!("{name}.{conv}"), c_in, c_out, 3),
            bn: BatchNorm::new(reg, &format!("{name}.{bn}"), c_out),
        }
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, &y)?;
        ctx.tape.relu(&y)
    }
}

/// Two stacked [`ConvBnRelu`] units.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    first: ConvBnRelu,
    second: ConvBnRelu,
}

impl DoubleConv {
    pub(crate) fn new(reg: &mut Registry, name: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            first: ConvBnRelu::new(reg, name, "conv1", "bn1", c_in, c_out),
            second: ConvBnRelu::new(reg, name, "conv2", "bn2", c_out, c_out),
        }
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.first.forward(ctx, x)?;
        self.second.forward(ctx, &y)
    }
}

/// Chain of three residual units whose outputs (receptive fields 3, 5 and 7)
/// are concatenated and projected back to the input width.
#[derive(Clone, Debug)]
pub struct ResPath {
    units: Vec<(Conv, Conv)>,
    proj: Conv,
}

/// Outputs of every unit of a [`ResPath`], for inspection.
pub struct ResPathTaps<E: Element> {
    pub units: Vec<Tensor<E>>,
    pub output: Tensor<E>,
}

impl ResPath {
    pub(crate) fn new(reg: &mut Registry, name: &str, channels: usize) -> Self {
        let units = (1..=3)
            .map(|t| {
                (
                    Conv::new(reg, &format!("{name}.unit{t}.conv3"), channels, channels, 3),
                    Conv::new(reg, &format!("{name}.unit{t}.conv1"), channels, channels, 1),
                )
            })
            .collect();
        Self {
            units,
            proj: Conv::new(reg, &format!("{name}.proj"), 3 * channels, channels, 1),
        }
    }

    pub fn forward_taps<E: Element>(&self, ctx: &mut Ctx<'_, E>, skip: &Tensor<E>) -> Result<ResPathTaps<E>> {
        let mut u = skip.clone();
        let mut taps = Vec::with_capacity(3);
        for (c3, c1) in &self.units {
            let a = c3.forward(ctx, &u)?;
            let b = c1.forward(ctx, &u)?;
            let s = ctx.tape.add(&a, &b)?;
            u = ctx.tape.relu(&s)?;
            taps.push(u.clone());
        }
        let refs: Vec<&Tensor<E>> = taps.iter().collect();
        let cat = ctx.tape.concat_channels(&refs)?;
        let output = self.proj.forward(ctx, &cat)?;
        Ok(ResPathTaps { units: taps, output })
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, skip: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_taps(ctx, skip)?.output)
    }
}

/// Gated convolutional layer: a one-channel sigmoid gate computed from the
/// stream and a gate feature rescales the stream before a residual 3×3 conv.
#[derive(Clone, Debug)]
pub struct Gcl {
    pub(crate) gate: Conv,
    pub(crate) conv: Conv,
    pub(crate) bn: BatchNorm,
}

impl Gcl {
    pub(crate) fn new(reg: &mut Registry, name: &str, channels: usize) -> Self {
        Self {
            gate: Conv::new(reg, &format!("{name}.gate"), 2 * channels, 1, 1),
            conv: Conv::new(reg, &format!("{name}.conv"), channels, channels, 3),
            bn: BatchNorm::new(reg, &format!("{name}.bn"), channels),
        }
    }

    /// The gate map α (N×1×H×W), in (0, 1).
    pub fn alpha<E: Element>(&self, ctx: &mut Ctx<'_, E>, stream: &Tensor<E>, gate_feature: &Tensor<E>) -> Result<Tensor<E>> {
        let cat = ctx.tape.concat_channels(&[stream, gate_feature])?;
        let logits = self.gate.forward(ctx, &cat)?;
        ctx.tape.sigmoid(&logits)
    }

    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, stream: &Tensor<E>, gate_feature: &Tensor<E>) -> Result<Tensor<E>> {
        let gated = match ctx.gate {
            GateMode::Learned => {
                let alpha = self.alpha(ctx, stream, gate_feature)?;
                ctx.tape.gate_scale(stream, &alpha)?
            }
            GateMode::Zero => stream.clone(),
        };
        let y = self.conv.forward(ctx, &gated)?;
        let y = ctx.tape.add(&y, stream)?;
        let y = self.bn.forward(ctx, &y)?;
        ctx.tape.relu(&y)
    }
}
