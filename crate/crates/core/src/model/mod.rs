//! The stacked dewarping network.
//!
//! A primary U-Net (residual paths on every skip, plus a gated edge stream
//! fed from three encoder levels) produces features `U1` and an edge map; a
//! secondary U-Net encodes `U1`, splits its bottleneck into two halves and
//! decodes each half with one shared decoder into one grid channel.

mod layers;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Element, Result as TensorResult, Tape, Tensor, TensorError};

pub use layers::{BatchNorm, Conv, ConvBnRelu, Ctx, DoubleConv, GateMode, Gcl, ResPath, ResPathTaps};
pub use params::{ParamId, ParamStore, StatsId, StatsStore};

use params::Registry;

pub const LEVELS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square input extent; a multiple of 32.
    pub input_size: usize,
    /// Channels of the stem; every encoder level doubles it.
    pub base_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            base_width: 32,
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            base_width: 8,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(ModelError::Config(format!(
                "input_size must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        if self.base_width < 2 || !self.base_width.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "base_width must be an even number >= 2, got {}",
                self.base_width
            )));
        }
        Ok(())
    }

    /// Channels of encoder level `level` (1-based).
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_width << (level - 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_width * 32
    }

    /// Width of the primary decoder output and of the edge stream.
    pub fn head_channels(&self) -> usize {
        self.base_width / 2
    }
}

/// Five pooled encoder levels, a bottleneck and a residual path per skip.
#[derive(Clone, Debug)]
struct Encoder {
    blocks: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    res_paths: Vec<ResPath>,
}

struct Encoded<E: Element> {
    /// Block outputs before pooling (L1..L5).
    levels: Vec<Tensor<E>>,
    /// Residual-path outputs of the levels.
    skips: Vec<Tensor<E>>,
    bottleneck: Tensor<E>,
}

impl Encoder {
    fn new(reg: &mut Registry, name: &str, c_in: usize, cfg: &ModelConfig) -> Self {
        let mut blocks = Vec::with_capacity(LEVELS);
        let mut res_paths = Vec::with_capacity(LEVELS);
        let mut prev = c_in;
        for level in 1..=LEVELS {
            let c = cfg.level_channels(level);
            blocks.push(DoubleConv::new(reg, &format!("{name}.encoder.block{level}"), prev, c));
            prev = c;
        }
        let bottleneck = DoubleConv::new(reg, &format!("{name}.encoder.bottleneck"), prev, cfg.bottleneck_channels());
        for level in 1..=LEVELS {
            res_paths.push(ResPath::new(reg, &format!("{name}.respath{level}"), cfg.level_channels(level)));
        }
        Self {
            blocks,
            bottleneck,
            res_paths,
        }
    }

    fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>) -> TensorResult<Encoded<E>> {
        let mut levels = Vec::with_capacity(LEVELS);
        let mut h = x.clone();
        for block in &self.blocks {
            let l = block.forward(ctx, &h)?;
            h = ctx.tape.max_pool2(&l)?;
            levels.push(l);
        }
        let bottleneck = self.bottleneck.forward(ctx, &h)?;
        let mut skips = Vec::with_capacity(LEVELS);
        for (path, l) in self.res_paths.iter().zip(&levels) {
            skips.push(path.forward(ctx, l)?);
        }
        Ok(Encoded {
            levels,
            skips,
            bottleneck,
        })
    }
}

/// Five upsampling stages, deepest first.
#[derive(Clone, Debug)]
struct Decoder {
    stages: Vec<DoubleConv>,
}

impl Decoder {
    /// `input` channels enter stage 1; stage `j` consumes the skip of level
    /// `6 - j` and emits `outputs[j - 1]` channels.
    fn new(reg: &mut Registry, name: &str, input: usize, cfg: &ModelConfig, outputs: [usize; LEVELS]) -> Self {
        let mut prev = input;
        let stages = (1..=LEVELS)
            .map(|j| {
                let skip = cfg.level_channels(LEVELS + 1 - j);
                let stage = DoubleConv::new(reg, &format!("{name}.decoder.stage{j}"), prev + skip, outputs[j - 1]);
                prev = outputs[j - 1];
                stage
            })
            .collect();
        Self { stages }
    }

    fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>, skips: &[Tensor<E>]) -> TensorResult<Tensor<E>> {
        let mut h = x.clone();
        for (j, stage) in self.stages.iter().enumerate() {
            let up = ctx.tape.upsample_bilinear2(&h)?;
            let cat = ctx.tape.concat_channels(&[&up, &skips[LEVELS - 1 - j]])?;
            h = stage.forward(ctx, &cat)?;
        }
        Ok(h)
    }
}

/// Edge stream gated by three encoder levels.
#[derive(Clone, Debug)]
pub struct Gcn {
    stem: Conv,
    reducers: Vec<Conv>,
    gates: Vec<Gcl>,
    head: Conv,
}

/// Encoder levels whose features gate the edge stream.
pub const GATE_LEVELS: [usize; 3] = [2, 4, 5];

pub struct GcnOutput<E: Element> {
    pub stream: Tensor<E>,
    pub edge_logits: Tensor<E>,
    /// Per-gate α maps (empty under [`GateMode::Zero`]).
    pub alphas: Vec<Tensor<E>>,
}

impl Gcn {
    fn new(reg: &mut Registry, cfg: &ModelConfig) -> Self {
        let g = cfg.head_channels();
        let stem = Conv::new(reg, "primary.gcn.stem", cfg.base_width, g, 1);
        let reducers = GATE_LEVELS
            .iter()
            .map(|&l| Conv::new(reg, &format!("primary.gcn.reduce{l}"), cfg.level_channels(l), g, 1))
            .collect();
        let gates = (1..=GATE_LEVELS.len())
            .map(|i| Gcl::new(reg, &format!("primary.gcn.gcl{i}"), g))
            .collect();
        let head = Conv::new(reg, "primary.gcn.head", g, 1, 1);
        Self {
            stem,
            reducers,
            gates,
            head,
        }
    }

    pub fn gates(&self) -> &[Gcl] {
        &self.gates
    }

    /// Reduced, upsampled gate feature of `tap`.
    pub fn gate_feature<E: Element>(&self, ctx: &mut Ctx<'_, E>, index: usize, tap: &Tensor<E>, size: usize) -> TensorResult<Tensor<E>> {
        let r = self.reducers[index].forward(ctx, tap)?;
        ctx.tape.resize_bilinear(&r, size, size)
    }

    pub fn stem<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>) -> TensorResult<Tensor<E>> {
        self.stem.forward(ctx, x)
    }

    pub fn head<E: Element>(&self, ctx: &mut Ctx<'_, E>, stream: &Tensor<E>) -> TensorResult<Tensor<E>> {
        self.head.forward(ctx, stream)
    }

    /// `taps` are L2, L4 and L5.
    pub fn forward<E: Element>(&self, ctx: &mut Ctx<'_, E>, x: &Tensor<E>, taps: [&Tensor<E>; 3]) -> TensorResult<GcnOutput<E>> {
        let size = x.shape()[2];
        let mut stream = self.stem(ctx, x)?;
        let mut alphas = Vec::new();
        for (i, tap) in taps.iter().enumerate() {
            let feature = self.gate_feature(ctx, i, tap, size)?;
            if ctx.gate == GateMode::Learned {
                alphas.push(self.gates[i].alpha(ctx, &stream, &feature)?);
            }
            stream = self.gates[i].forward(ctx, &stream, &feature)?;
        }
        let edge_logits = self.head(ctx, &stream)?;
        Ok(GcnOutput {
            stream,
            edge_logits,
            alphas,
        })
    }
}

#[derive(Clone, Debug)]
struct Architecture {
    stem: ConvBnRelu,
    primary_encoder: Encoder,
    primary_decoder: Decoder,
    gcn: Gcn,
    secondary_encoder: Encoder,
    secondary_decoder: Decoder,
    secondary_head: Conv,
}

impl Architecture {
    fn new(cfg: &ModelConfig, reg: &mut Registry) -> Self {
        let b = cfg.base_width;
        let stem = ConvBnRelu::new(reg, "primary.stem", "conv", "bn", 3, b);
        let primary_encoder = Encoder::new(reg, "primary", b, cfg);
        let primary_decoder = Decoder::new(
            reg,
            "primary",
            cfg.bottleneck_channels(),
            cfg,
            [16 * b, 8 * b, 4 * b, 2 * b, cfg.head_channels()],
        );
        let gcn = Gcn::new(reg, cfg);
        let u1 = b + 2 * cfg.head_channels();
        let secondary_encoder = Encoder::new(reg, "secondary", u1, cfg);
        let secondary_decoder = Decoder::new(
            reg,
            "secondary",
            cfg.bottleneck_channels() / 2,
            cfg,
            [16 * b, 8 * b, 4 * b, 2 * b, b],
        );
        let secondary_head = Conv::new(reg, "secondary.head", b, 1, 1);
        Self {
            stem,
            primary_encoder,
            primary_decoder,
            gcn,
            secondary_encoder,
            secondary_decoder,
            secondary_head,
        }
    }
}

/// Shapes of the named intermediate tensors of one forward pass, in
/// execution order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardTrace {
    pub entries: Vec<(&'static str, Vec<usize>)>,
}

impl ForwardTrace {
    fn push<E: Element>(&mut self, name: &'static str, t: &Tensor<E>) {
        self.entries.push((name, t.shape().to_vec()));
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s.as_slice())
    }
}

pub struct PrimaryOutput<E: Element> {
    pub u1: Tensor<E>,
    pub edge_logits: Tensor<E>,
    pub edge_pred: Tensor<E>,
}

/// Secondary encoder results, exposed so the decoder can be driven directly.
pub struct SecondaryEncoding<E: Element> {
    pub bottleneck: Tensor<E>,
    pub skips: Vec<Tensor<E>>,
}

pub struct ModelOutput<E: Element> {
    /// N×2×S×S, channel 0 = x, channel 1 = y, in (-1, 1).
    pub grid: Tensor<E>,
    /// N×1×S×S edge probabilities.
    pub edge_pred: Tensor<E>,
    pub trace: ForwardTrace,
}

/// Forward-pass options.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub training: bool,
    pub gate: GateMode,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        training: true,
        gate: GateMode::Learned,
    };
    pub const EVAL: Mode = Mode {
        training: false,
        gate: GateMode::Learned,
    };
}

#[derive(Clone, Debug)]
pub struct Model<E: Element = f32> {
    config: ModelConfig,
    arch: Architecture,
    pub params: ParamStore<E>,
    pub stats: StatsStore<E>,
}

impl<E: Element> Model<E> {
    /// Builds a freshly initialized model; `seed` fixes the initial weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut reg = Registry::default();
        let arch = Architecture::new(&config, &mut reg);
        Ok(Self {
            config,
            arch,
            params: ParamStore::initialize(&reg, seed),
            stats: StatsStore::initialize(&reg),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn gcn(&self) -> &Gcn {
        &self.arch.gcn
    }

    pub fn res_path(&self, stage: Stage, level: usize) -> &ResPath {
        match stage {
            Stage::Primary => &self.arch.primary_encoder.res_paths[level - 1],
            Stage::Secondary => &self.arch.secondary_encoder.res_paths[level - 1],
        }
    }

    pub fn cast<F: Element>(&self) -> Model<F> {
        Model {
            config: self.config,
            arch: self.arch.clone(),
            params: self.params.cast(),
            stats: self.stats.cast(),
        }
    }

    /// Registers every parameter as a leaf of `tape`, in canonical order.
    pub fn bind(&self, tape: &mut Tape<E>) -> Vec<Tensor<E>> {
        self.params.tensors().iter().map(|p| tape.leaf(p)).collect()
    }

    fn check_input(&self, input: &Tensor<E>) -> TensorResult<()> {
        let (_, c, h, w) = input.dims4("model input")?;
        let s = self.config.input_size;
        for (axis, expected, got) in [("channel", 3, c), ("height", s, h), ("width", s, w)] {
            if expected != got {
                return Err(TensorError::Dim {
                    op: "model input",
                    axis,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Full forward pass. Pass `bound` from [`Model::bind`] on a recording
    /// tape to obtain parameter gradients afterwards.
    pub fn forward(&mut self, tape: &mut Tape<E>, bound: Option<&[Tensor<E>]>, input: &Tensor<E>, mode: Mode) -> TensorResult<ModelOutput<E>> {
        self.check_input(input)?;
        self.with_ctx(tape, bound, mode, |parts, ctx| parts.full(ctx, input))
    }

    /// Runs `f` with a forward context and read access to the sub-networks.
    pub fn with_ctx<R>(
        &mut self,
        tape: &mut Tape<E>,
        bound: Option<&[Tensor<E>]>,
        mode: Mode,
        f: impl FnOnce(&Parts<'_>, &mut Ctx<'_, E>) -> R,
    ) -> R {
        let arch = &self.arch;
        let params = match bound {
            Some(b) => b,
            None => self.params.tensors(),
        };
        let mut ctx = Ctx {
            tape,
            params,
            stats: self.stats.as_mut_slice(),
            training: mode.training,
            gate: mode.gate,
        };
        f(&Parts { arch }, &mut ctx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Primary,
    Secondary,
}

/// Read-only handle on the sub-networks.
pub struct Parts<'a> {
    arch: &'a Architecture,
}

impl Parts<'_> {
    pub fn full<E: Element>(&self, ctx: &mut Ctx<'_, E>, input: &Tensor<E>) -> TensorResult<ModelOutput<E>> {
        let mut trace = ForwardTrace::default();
        let primary = primary_forward(self.arch, ctx, input, &mut trace)?;
        let grid = secondary_forward(self.arch, ctx, &primary.u1, &mut trace)?;
        Ok(ModelOutput {
            grid,
            edge_pred: primary.edge_pred,
            trace,
        })
    }

    pub fn primary<E: Element>(&self, ctx: &mut Ctx<'_, E>, input: &Tensor<E>) -> TensorResult<(PrimaryOutput<E>, ForwardTrace)> {
        let mut trace = ForwardTrace::default();
        let out = primary_forward(self.arch, ctx, input, &mut trace)?;
        Ok((out, trace))
    }

    pub fn encode_secondary<E: Element>(&self, ctx: &mut Ctx<'_, E>, u1: &Tensor<E>) -> TensorResult<SecondaryEncoding<E>> {
        let enc = self.arch.secondary_encoder.forward(ctx, u1)?;
        Ok(SecondaryEncoding {
            bottleneck: enc.bottleneck,
            skips: enc.skips,
        })
    }

    /// One pass of the shared secondary decoder and head: a bottleneck half
    /// to a one-channel map.
    pub fn decode_half<E: Element>(&self, ctx: &mut Ctx<'_, E>, half: &Tensor<E>, skips: &[Tensor<E>]) -> TensorResult<Tensor<E>> {
        decode_half(self.arch, ctx, half, skips)
    }

    pub fn gcn(&self) -> &Gcn {
        &self.arch.gcn
    }
}

fn primary_forward<E: Element>(arch: &Architecture, ctx: &mut Ctx<'_, E>, input: &Tensor<E>, trace: &mut ForwardTrace) -> TensorResult<PrimaryOutput<E>> {
    let x = arch.stem.forward(ctx, input)?;
    trace.push("X", &x);
    let enc = arch.primary_encoder.forward(ctx, &x)?;
    for (name, l) in ["L1", "L2", "L3", "L4", "L5"].into_iter().zip(&enc.levels) {
        trace.push(name, l);
    }
    trace.push("B", &enc.bottleneck);
    let o = arch.primary_decoder.forward(ctx, &enc.bottleneck, &enc.skips)?;
    trace.push("O", &o);
    let gcn = arch
        .gcn
        .forward(ctx, &x, [&enc.levels[1], &enc.levels[3], &enc.levels[4]])?;
    trace.push("G_o", &gcn.stream);
    let edge_pred = ctx.tape.sigmoid(&gcn.edge_logits)?;
    trace.push("edge_pred", &edge_pred);
    let u1 = ctx.tape.concat_channels(&[&x, &o, &gcn.stream])?;
    trace.push("U1", &u1);
    Ok(PrimaryOutput {
        u1,
        edge_logits: gcn.edge_logits,
        edge_pred,
    })
}

fn decode_half<E: Element>(arch: &Architecture, ctx: &mut Ctx<'_, E>, half: &Tensor<E>, skips: &[Tensor<E>]) -> TensorResult<Tensor<E>> {
    let h = arch.secondary_decoder.forward(ctx, half, skips)?;
    arch.secondary_head.forward(ctx, &h)
}

fn secondary_forward<E: Element>(arch: &Architecture, ctx: &mut Ctx<'_, E>, u1: &Tensor<E>, trace: &mut ForwardTrace) -> TensorResult<Tensor<E>> {
    let enc = arch.secondary_encoder.forward(ctx, u1)?;
    trace.push("B_secondary", &enc.bottleneck);
    let half = enc.bottleneck.shape()[1] / 2;
    let halves = ctx.tape.split_channels(&enc.bottleneck, &[half, half])?;
    trace.push("B1", &halves[0]);
    trace.push("B2", &halves[1]);
    // Both halves pass through the shared decoder as one batch, so its
    // batch statistics and running averages cover x and y alike.
    let n = halves[0].shape()[0];
    let stacked = ctx.tape.concat_batch(&[&halves[0], &halves[1]])?;
    let skips = enc
        .skips
        .iter()
        .map(|s| ctx.tape.concat_batch(&[s, s]))
        .collect::<TensorResult<Vec<_>>>()?;
    let decoded = decode_half(arch, ctx, &stacked, &skips)?;
    let mut outs = ctx.tape.split_batch(&decoded, &[n, n])?.into_iter();
    let (o1, o2) = (outs.next().expect("two halves"), outs.next().expect("two halves"));
    trace.push("O1", &o1);
    trace.push("O2", &o2);
    let cat = ctx.tape.concat_channels(&[&o1, &o2])?;
    let grid = ctx.tape.tanh(&cat)?;
    trace.push("grid", &grid);
    Ok(grid)
}
