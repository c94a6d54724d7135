//! Dense N-dimensional tensors with a reverse-mode gradient tape.
//!
//! The engine covers exactly the layer vocabulary of the dewarping network:
//! 2-D convolution (1×1 and 3×3 kernels), 2×2 max pooling, align-corners
//! bilinear resizing, channel concatenation and splitting, pointwise
//! activations, batch normalization, and the two training losses.
//!
//! Tensors are immutable values backed by shared storage. An operation
//! executed through a recording [`Tape`] on inputs that are tracked by that
//! tape produces a tracked output; [`Tape::backward`] replays the recorded
//! operations in reverse order.
//!
//! Storage is generic over [`Element`] so that gradient checks can run the
//! same code in 64-bit precision; the network itself uses `f32`.

mod batchnorm;
mod channels;
mod conv;
mod elementwise;
mod loss;
mod pool;
mod resize;
mod tape;

use std::fmt;
use std::sync::Arc;

use num_traits::{Float, NumCast};
use thiserror::Error;

pub use batchnorm::{RunningStats, BN_EPS, BN_MOMENTUM};
pub use conv::ConvParams;
pub use elementwise::Activation;
pub use tape::{Gradients, Tape};

use tape::NodeId;

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {got}")]
    Dim {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("tensor belongs to a different tape")]
    ForeignTape,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Scalar type usable as tensor storage.
pub trait Element:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    /// `c = a·b + (accumulate ? c : 0)` for an `m×k` by `k×n` product with
    /// arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        c_strides: (usize, usize),
        accumulate: bool,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
                c_strides: (usize, usize),
                accumulate: bool,
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

/// Lossless-enough conversion of an `f64` constant into the element type.
#[inline]
pub fn cast<E: Element>(v: f64) -> E {
    <E as NumCast>::from(v).expect("finite constant")
}

/// An immutable dense tensor in row-major order (N, C, H, W for images).
#[derive(Clone)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    node: Option<NodeId>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Contract {
                op: "Tensor::new",
                msg: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, (0..n).map(f).collect())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<E> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Whether this tensor participates in gradient recording.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// The same values, detached from any tape.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Mutable access to the values of an untracked tensor; storage shared
    /// with other tensors is copied first.
    pub fn data_mut(&mut self) -> &mut [E] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// True when both tensors view the identical storage allocation.
    pub fn shares_storage(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    pub(crate) fn storage(&self) -> &Arc<Vec<E>> {
        &self.data
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::Contract {
                op: "reshape",
                msg: format!("cannot view {:?} as {shape:?}", self.shape),
            });
        }
        if self.node.is_some() {
            return Err(TensorError::Contract {
                op: "reshape",
                msg: "tracked tensors cannot be reshaped".into(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
            node: None,
        })
    }

    /// (N, C, H, W) of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Elementwise conversion into another element type (untracked).
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .map(|&v| <F as NumCast>::from(v).expect("castable value"))
                .collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub(crate) fn expect_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::Rank {
            op,
            expected: a.len(),
            shape: b.to_vec(),
        });
    }
    const AXES: [&str; 4] = ["batch", "channel", "height", "width"];
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            let axis = if a.len() == 4 { AXES[i] } else { "extent" };
            return Err(TensorError::Dim {
                op,
                axis,
                expected: x,
                got: y,
            });
        }
    }
    Ok(())
}
