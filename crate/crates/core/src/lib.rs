//! Part-based ensemble transfer learning for facial expression recognition.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod expression;
pub mod gradcam;
pub mod gradcheck;
pub mod inference;
pub mod init;
pub mod landmarks;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod parallel;
pub mod preprocess;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use expression::Expression;
pub use landmarks::Feature;
pub use network::{Network, NetworkKind, NetworkSpec};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
