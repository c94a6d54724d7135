//! Optimization loop, Adam, checkpoints and loss logging.

mod adam;
mod checkpoint;
mod dataset;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::DenseGrid;
use crate::io::write_atomic_with;
use crate::losses::{combined_loss, BoundaryWeightMask, LossConfig};
use crate::model::{Mode, Model, ModelConfig, ModelError};
use crate::tensor::{Tape, Tensor, TensorError};

pub use adam::{Adam, AdamConfig, NonFiniteGradient};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, StoredTensor, TensorRef, MAGIC, VERSION};
pub use dataset::{batch_indices, Dataset, Example};

pub const LOG_HEADER: &str = "step,grid_loss,edge_loss,total";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid checkpoint at byte {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },
    #[error("non-finite gradient for parameter `{param}` at step {step}")]
    NonFinite { param: String, step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total number of optimizer steps (a resumed run continues up to it).
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda: f64,
    pub omega: f64,
    /// Boundary taper width in pixels; S/16 when absent.
    pub tau: Option<f64>,
    /// Seeds weight initialization and batch order.
    pub seed: u64,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let loss = LossConfig::default();
        Self {
            batch_size: 4,
            steps: 1000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lambda: loss.lambda,
            omega: loss.omega,
            tau: loss.tau,
            seed: 0,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    /// Short single-core run: 500 steps at a learning rate of 1e-3.
    pub fn desk() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            omega: self.omega,
            tau: self.tau,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        self.adam().validate().map_err(TrainError::Config)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.omega >= 1.0) {
            return Err(TrainError::Config(format!("omega must be >= 1, got {}", self.omega)));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0) {
                return Err(TrainError::Config(format!("tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

/// Losses of one optimizer step; `step` counts completed steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub step: u64,
    pub grid: f32,
    pub edge: f32,
    pub total: f32,
}

impl StepLoss {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.grid, self.edge, self.total)
    }
}

pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub config: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    mask: BoundaryWeightMask,
}

/// Stacks examples into network tensors.
pub struct Batch {
    pub input: Tensor,
    pub grid: Vec<f32>,
    pub edges: Vec<f32>,
}

impl Batch {
    pub fn gather(data: &Dataset, indices: &[usize]) -> Batch {
        let s = data.size;
        let mut input = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut grid = Vec::with_capacity(indices.len() * 2 * s * s);
        let mut edges = Vec::with_capacity(indices.len() * s * s);
        for &i in indices {
            let ex = &data.examples[i];
            input.extend_from_slice(&ex.input);
            grid.extend_from_slice(&ex.grid);
            edges.extend_from_slice(&ex.edges);
        }
        Batch {
            input: Tensor::new([indices.len(), 3, s, s], input).expect("consistent batch"),
            grid,
            edges,
        }
    }
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::new(model_config, config.seed)?;
        let adam = Adam::new(config.adam(), &model.params);
        let mask = config.loss().mask(model_config.input_size)?;
        Ok(Self {
            model,
            adam,
            config,
            step: 0,
            mask,
        })
    }

    fn check_dataset(&self, data: &Dataset) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::Config("dataset is empty".into()));
        }
        if data.size != self.model.config().input_size {
            return Err(TrainError::Config(format!(
                "dataset size {} does not match model input_size {}",
                data.size,
                self.model.config().input_size
            )));
        }
        Ok(())
    }

    /// Forward, backward and one Adam update on the next batch.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepLoss, TrainError> {
        self.check_dataset(data)?;
        let indices = batch_indices(self.config.seed, self.step, self.config.batch_size, data.len());
        let batch = Batch::gather(data, &indices);
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let out = self.model.forward(&mut tape, Some(&bound), &batch.input, Mode::TRAIN)?;
        let terms = combined_loss(
            &mut tape,
            &out.grid,
            &batch.grid,
            &out.edge_pred,
            &batch.edges,
            &self.mask,
            self.config.lambda,
        )?;
        let loss = StepLoss {
            step: self.step + 1,
            grid: terms.grid.item().expect("scalar"),
            edge: terms.edge.item().expect("scalar"),
            total: terms.total.item().expect("scalar"),
        };
        let grads = tape.backward(&terms.total)?;
        let slices: Vec<&[f32]> = bound
            .iter()
            .map(|b| grads.get(b).expect("every parameter is a leaf"))
            .collect();
        self.adam
            .step(&mut self.model.params, &slices)
            .map_err(|e| TrainError::NonFinite {
                param: e.param,
                step: self.step + 1,
            })?;
        self.step += 1;
        Ok(loss)
    }

    /// Trains until `config.steps`, reporting every step; `checkpoint` is
    /// called at each checkpoint interval and after the last step.
    pub fn run(
        &mut self,
        data: &Dataset,
        mut on_step: impl FnMut(&StepLoss) -> Result<(), TrainError>,
        mut checkpoint: impl FnMut(&Trainer) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        self.check_dataset(data)?;
        while self.step < self.config.steps {
            let loss = self.train_step(data)?;
            on_step(&loss)?;
            let interval = self.config.checkpoint_interval;
            if interval > 0 && self.step.is_multiple_of(interval) && self.step < self.config.steps {
                checkpoint(self)?;
            }
        }
        checkpoint(self)
    }

    fn metadata(&self) -> Vec<(String, String)> {
        let c = &self.config;
        let mut meta = model_metadata(self.model.config());
        meta.extend(
            [
                ("step", self.step.to_string()),
                ("seed", c.seed.to_string()),
                ("batch_size", c.batch_size.to_string()),
                ("steps", c.steps.to_string()),
                ("lr", format!("{:?}", c.lr)),
                ("beta1", format!("{:?}", c.beta1)),
                ("beta2", format!("{:?}", c.beta2)),
                ("eps", format!("{:?}", c.eps)),
                ("lambda", format!("{:?}", c.lambda)),
                ("omega", format!("{:?}", c.omega)),
                ("tau", c.tau.map_or("auto".to_string(), |t| format!("{t:?}"))),
                ("checkpoint_interval", c.checkpoint_interval.to_string()),
                ("adam_t", self.adam.t.to_string()),
            ]
            .map(|(k, v)| (k.to_string(), v)),
        );
        meta
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut tensors = model_tensor_refs(&self.model);
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for ((name, t), data) in self.model.params.iter().zip(moments.iter()) {
                tensors.push(OwnedRef {
                    name: format!("{prefix}{name}"),
                    shape: t.shape().to_vec(),
                    data,
                });
            }
        }
        write_checkpoint(w, &self.metadata(), &tensors.iter().map(|t| t.as_ref()).collect::<Vec<_>>())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        write_atomic_with(path, |w| self.write_checkpoint(w)).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Restores a trainer (weights, statistics, optimizer state, step and
    /// hyperparameters) from a checkpoint written by [`Trainer::save`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let model = model_from_checkpoint(ckpt)?;
        let tau: String = ckpt.meta_parse("tau")?;
        let config = TrainConfig {
            batch_size: ckpt.meta_parse("batch_size")?,
            steps: ckpt.meta_parse("steps")?,
            lr: ckpt.meta_parse("lr")?,
            beta1: ckpt.meta_parse("beta1")?,
            beta2: ckpt.meta_parse("beta2")?,
            eps: ckpt.meta_parse("eps")?,
            lambda: ckpt.meta_parse("lambda")?,
            omega: ckpt.meta_parse("omega")?,
            tau: if tau == "auto" {
                None
            } else {
                Some(tau.parse().map_err(|_| TrainError::Checkpoint {
                    offset: 12,
                    msg: format!("bad tau `{tau}`"),
                })?)
            },
            seed: ckpt.meta_parse("seed")?,
            checkpoint_interval: ckpt.meta_parse("checkpoint_interval")?,
        };
        config.validate()?;
        let mut adam = Adam::new(config.adam(), &model.params);
        adam.t = ckpt.meta_parse("adam_t")?;
        for (i, (name, t)) in model.params.iter().enumerate() {
            for (prefix, dst) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                let stored = expect_tensor(ckpt, &format!("{prefix}{name}"), t.shape())?;
                dst.copy_from_slice(&stored.data);
            }
        }
        let mask = config.loss().mask(model.config().input_size)?;
        Ok(Self {
            step: ckpt.meta_parse("step")?,
            model,
            adam,
            config,
            mask,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

struct OwnedRef<'a> {
    name: String,
    shape: Vec<usize>,
    data: &'a [f32],
}

impl OwnedRef<'_> {
    fn as_ref(&self) -> TensorRef<'_> {
        TensorRef {
            name: &self.name,
            shape: &self.shape,
            data: self.data,
        }
    }
}

fn model_metadata(cfg: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("input_size".to_string(), cfg.input_size.to_string()),
        ("base_width".to_string(), cfg.base_width.to_string()),
    ]
}

/// Parameters in canonical order followed by running statistics.
fn model_tensor_refs(model: &Model) -> Vec<OwnedRef<'_>> {
    let mut out: Vec<OwnedRef<'_>> = model
        .params
        .iter()
        .map(|(name, t)| OwnedRef {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data(),
        })
        .collect();
    for (i, name) in model.stats.names().iter().enumerate() {
        let s = model.stats.get(i);
        for (suffix, data) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            out.push(OwnedRef {
                name: format!("{name}.{suffix}"),
                shape: vec![data.len()],
                data,
            });
        }
    }
    out
}

/// Writes the weights and statistics of `model` (no optimizer state).
pub fn write_model_checkpoint<W: Write>(model: &Model, w: W) -> std::io::Result<()> {
    let refs = model_tensor_refs(model);
    write_checkpoint(w, &model_metadata(model.config()), &refs.iter().map(OwnedRef::as_ref).collect::<Vec<_>>())
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), TrainError> {
    write_atomic_with(path, |w| write_model_checkpoint(model, w)).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&bytes)
}

fn expect_tensor<'a>(ckpt: &'a Checkpoint, name: &str, shape: &[usize]) -> Result<&'a StoredTensor, TrainError> {
    let t = ckpt.tensor(name).ok_or_else(|| TrainError::Checkpoint {
        offset: 12,
        msg: format!("missing tensor `{name}`"),
    })?;
    if t.shape != shape {
        return Err(TrainError::Checkpoint {
            offset: 12,
            msg: format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape),
        });
    }
    Ok(t)
}

/// Rebuilds a model from the weights and statistics in `ckpt`.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model, TrainError> {
    let config = ModelConfig {
        input_size: ckpt.meta_parse("input_size")?,
        base_width: ckpt.meta_parse("base_width")?,
    };
    let mut model = Model::new(config, 0)?;
    for i in 0..model.params.len() {
        let name = model.params.names()[i].clone();
        let shape = model.params.tensors()[i].shape().to_vec();
        let stored = expect_tensor(ckpt, &name, &shape)?;
        model.params.values_mut(i).copy_from_slice(&stored.data);
    }
    for i in 0..model.stats.len() {
        let name = model.stats.names()[i].clone();
        let c = model.stats.get(i).mean.len();
        let mean = expect_tensor(ckpt, &format!("{name}.running_mean"), &[c])?.data.clone();
        let var = expect_tensor(ckpt, &format!("{name}.running_var"), &[c])?.data.clone();
        let s = model.stats.get_mut(i);
        s.mean = mean;
        s.var = var;
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<Model, TrainError> {
    model_from_checkpoint(&load_checkpoint(path)?)
}

/// Predicted grids for `inputs` (planar 3×S×S each), evaluated in batches.
pub fn predict_grids(model: &mut Model, inputs: &[&[f32]], batch: usize) -> Result<Vec<DenseGrid>, TrainError> {
    let s = model.config().input_size;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let data: Vec<f32> = chunk.iter().flat_map(|x| x.iter().copied()).collect();
        let input = Tensor::new([chunk.len(), 3, s, s], data)?;
        let mut tape = Tape::inference();
        let pred = model.forward(&mut tape, None, &input, Mode::EVAL)?;
        for i in 0..chunk.len() {
            out.push(DenseGrid::from_tensor(&pred.grid, i).map_err(|e| TrainError::Config(e.to_string()))?);
        }
    }
    Ok(out)
}

/// Mean endpoint error of the model's grids and of the identity grid
/// against the ground truth of `data`.
pub fn endpoint_errors(model: &mut Model, data: &Dataset) -> Result<(f64, f64), TrainError> {
    let inputs: Vec<&[f32]> = data.examples.iter().map(|e| e.input.as_slice()).collect();
    let preds = predict_grids(model, &inputs, 8)?;
    let identity = DenseGrid::identity(data.size, data.size);
    let (mut model_epe, mut identity_epe) = (0.0, 0.0);
    for (ex, pred) in data.examples.iter().zip(&preds) {
        let gt = DenseGrid::new(data.size, data.size, ex.grid.clone()).map_err(|e| TrainError::Dataset(e.to_string()))?;
        model_epe += pred.mean_endpoint_error(&gt);
        identity_epe += identity.mean_endpoint_error(&gt);
    }
    let n = data.len().max(1) as f64;
    Ok((model_epe / n, identity_epe / n))
}
