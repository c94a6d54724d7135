//! Training objectives: boundary-weighted grid regression plus an auxiliary
//! edge cross-entropy on the primary stage.

use serde::{Deserialize, Serialize};

use crate::tensor::{cast, Element, Result, Tape, Tensor, TensorError};

pub const DEFAULT_OMEGA: f64 = 5.0;
pub const DEFAULT_LAMBDA: f64 = 0.9;

/// Per-pixel weights `1 + (ω - 1)·max(0, 1 - d/τ)`, `d` being the Chebyshev
/// distance to the nearest border pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryWeightMask {
    size: usize,
    omega: f64,
    tau: f64,
    weights: Vec<f64>,
}

impl BoundaryWeightMask {
    pub fn new(size: usize, omega: f64, tau: f64) -> Result<Self> {
        if size == 0 || !(omega >= 1.0) || !(tau > 0.0) {
            return Err(TensorError::Contract {
                op: "BoundaryWeightMask",
                msg: format!("need size > 0, omega >= 1, tau > 0 (got {size}, {omega}, {tau})"),
            });
        }
        let mut weights = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let d = i.min(j).min(size - 1 - i).min(size - 1 - j) as f64;
                weights.push(1.0 + (omega - 1.0) * (1.0 - d / tau).max(0.0));
            }
        }
        Ok(Self {
            size,
            omega,
            tau,
            weights,
        })
    }

    /// ω = 5, τ = S/16.
    pub fn with_defaults(size: usize) -> Self {
        Self::new(size, DEFAULT_OMEGA, size as f64 / 16.0).expect("valid defaults")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * c).collect(),
            ..self.clone()
        }
    }

    fn as_elements<E: Element>(&self) -> Vec<E> {
        self.weights.iter().map(|&w| cast(w)).collect()
    }
}

/// Weights of the loss terms and the boundary profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub omega: f64,
    /// Taper width in pixels; `None` means S/16.
    pub tau: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            omega: DEFAULT_OMEGA,
            tau: None,
        }
    }
}

impl LossConfig {
    pub fn mask(&self, size: usize) -> Result<BoundaryWeightMask> {
        BoundaryWeightMask::new(size, self.omega, self.tau.unwrap_or(size as f64 / 16.0))
    }
}

/// Mean binary cross-entropy between edge probabilities and binary targets.
pub fn edge_loss<E: Element>(tape: &mut Tape<E>, edge_pred: &Tensor<E>, gt_edges: &[E]) -> Result<Tensor<E>> {
    tape.binary_cross_entropy(edge_pred, gt_edges)
}

/// Mean over batch, channels and pixels of `W·(g - ĝ)²`.
pub fn grid_loss<E: Element>(tape: &mut Tape<E>, grid: &Tensor<E>, gt_grid: &[E], mask: &BoundaryWeightMask) -> Result<Tensor<E>> {
    let (_, c, h, w) = grid.dims4("grid_loss")?;
    if c != 2 {
        return Err(TensorError::Dim {
            op: "grid_loss",
            axis: "channel",
            expected: 2,
            got: c,
        });
    }
    if h != mask.size || w != mask.size {
        return Err(TensorError::Dim {
            op: "grid_loss",
            axis: "mask extent",
            expected: h,
            got: mask.size,
        });
    }
    tape.weighted_mse(grid, gt_grid, &mask.as_elements())
}

pub struct LossTerms<E: Element> {
    pub grid: Tensor<E>,
    pub edge: Tensor<E>,
    pub total: Tensor<E>,
}

/// `grid_loss + λ·edge_loss`.
pub fn combined_loss<E: Element>(
    tape: &mut Tape<E>,
    grid: &Tensor<E>,
    gt_grid: &[E],
    edge_pred: &Tensor<E>,
    gt_edges: &[E],
    mask: &BoundaryWeightMask,
    lambda: f64,
) -> Result<LossTerms<E>> {
    let g = grid_loss(tape, grid, gt_grid, mask)?;
    let e = edge_loss(tape, edge_pred, gt_edges)?;
    let scaled = tape.scale(&e, lambda)?;
    let total = tape.add(&g, &scaled)?;
    Ok(LossTerms {
        grid: g,
        edge: e,
        total,
    })
}
