//! Document image dewarping: a stacked gated U-Net that regresses dense
//! backward maps, with the synthetic data, training loop, evaluation metrics
//! and post-processing around it.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod edges;
pub mod grid;
pub mod image;
pub mod interp;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod postproc;
pub mod synth;
pub mod tensor;
pub mod train;
