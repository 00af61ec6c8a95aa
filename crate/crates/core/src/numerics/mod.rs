//! Dense tensors, reverse-mode differentiation and the supporting numerics.

pub mod aent;
pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradReport, ParamCheck};
pub use graph::{CustomBackward, Graph, Node, Var};
pub use rng::Rng;
pub use tensor::{cosine, Tensor};
