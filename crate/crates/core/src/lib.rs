pub mod analysis;
pub mod attention;
pub mod cem;
pub mod checks;
pub mod cli;
pub mod deform;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod ops;
pub mod pyramid;
pub mod tensor;

pub use deform::{deform_conv2d, deform_conv2d_backward, DeformConv2d};
pub use error::{Error, Result};
pub use ops::{ConvSpec, GradPair};
pub use tensor::{Precision, Scalar, Shape, Tensor};
