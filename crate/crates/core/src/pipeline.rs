//! End-to-end rectification of a single photo.

use crate::grid::{resize_image, unwarp, DenseGrid, GridError};
use crate::image::Image;
use crate::model::{Mode, Model, ModelError};
use crate::postproc::{adaptive_smooth, PostprocParams, Smoothed};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DewarpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("predicted grid contains non-finite values")]
    NonFinite,
}

/// Where the backward map comes from.
pub enum GridSource<'a> {
    Model(&'a mut Model),
    /// Samples every pixel at its own position.
    Identity,
}

pub struct Dewarped {
    pub image: Image,
    /// Backward map at the input's resolution.
    pub grid: DenseGrid,
    pub postproc: Option<Smoothed>,
}

/// Backward map for `image` at the network resolution.
pub fn predict_grid(model: &mut Model, image: &Image) -> Result<DenseGrid, DewarpError> {
    let s = model.config().input_size;
    let small = resize_image(&image.to_rgb(), s, s);
    let input = Tensor::new([1, 3, s, s], small.to_planar())?;
    let mut tape = Tape::inference();
    let out = model.forward(&mut tape, None, &input, Mode::EVAL)?;
    let grid = DenseGrid::from_tensor(&out.grid, 0)?;
    if grid.xs().iter().chain(grid.ys()).any(|v| !v.is_finite()) {
        return Err(DewarpError::NonFinite);
    }
    Ok(grid)
}

/// Resize to the network size, predict, upsample the map to the input's
/// extent, resample and optionally smooth.
pub fn dewarp(image: &Image, source: GridSource<'_>, postproc: Option<&PostprocParams>) -> Result<Dewarped, DewarpError> {
    let (w, h) = (image.width(), image.height());
    let grid = match source {
        GridSource::Model(model) => {
            let g = predict_grid(model, image)?;
            if (g.width(), g.height()) == (w, h) {
                g
            } else {
                g.upsample(h, w)?
            }
        }
        GridSource::Identity => DenseGrid::identity(w, h),
    };
    let flat = unwarp(image, &grid)?;
    let (image, postproc) = match postproc {
        Some(p) => {
            let s = adaptive_smooth(&flat, p);
            (s.image.clone(), Some(s))
        }
        None => (flat, None),
    };
    Ok(Dewarped { image, grid, postproc })
}
