//! Two-stage synthetic segmentation datasets: a noise-to-mask GAN, a
//! mask-to-photo conditional GAN, a U-net consumer and fidelity metrics, on
//! top of a small reverse-mode autodiff core.

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod segmenter;
pub mod stage1;
pub mod stage2;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
