//! Minimal N×C×H×W tensor library with reverse-mode automatic differentiation.
//!
//! Only the operations needed by the saliency network are provided. Forward
//! values are recorded on a [`Tape`]; [`Tape::backward`] sweeps the tape in
//! exact reverse order and produces gradients for every node that requires
//! them. Trainable weights live in a [`ParamSet`] and are updated by [`Sgd`].
//!
//! All kernels are deterministic: with the `parallel` feature enabled work is
//! split over independent output elements (or batch items whose partial sums
//! are reduced in a fixed order), so results are bitwise identical to the
//! sequential build regardless of the thread count.

mod error;
mod gemm;
pub mod kernels;
mod optim;
pub mod par;
mod param;
pub mod snapshot;
mod tape;
mod tensor;

pub use error::TensorError;
pub use optim::Sgd;
pub use param::{glorot_uniform, he_uniform, ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};

/// Scalar type used by every tensor.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used by every tensor.
#[cfg(feature = "f32")]
pub type Real = f32;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
