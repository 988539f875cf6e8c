//! Dense-tensor engine with reverse-mode automatic differentiation.

mod adamax;
pub mod archive;
mod conv;
pub mod gradcheck;
mod norm;
mod params;
mod pointwise;
mod real;
mod reduce;
mod shape_ops;
pub(crate) use shape_ops::reflect_index;
mod tape;
mod tensor;

pub use adamax::{AdamaxConfig, AdamaxState};
pub use conv::Pad2d;
pub use norm::INSTANCE_NORM_EPS;
pub use params::ParamSet;
pub use pointwise::Activation;
pub use real::{gemm, Real, Trans};
pub use reduce::LossKind;
pub use tape::{Gradients, Tape};
pub use tensor::{NodeId, Tensor};
