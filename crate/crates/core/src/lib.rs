//! Contrastive losses with batch-SD terms, a from-scratch Siamese encoder,
//! the Gaussian-cluster AUC experiment, and a PatchMatch optical-flow pipeline.

pub mod cli;
pub mod error;
pub mod flow;
pub mod image;
pub mod interp;
pub mod losses;
pub mod matcher;
pub mod net;
pub mod pipeline;
pub mod seeds;
pub mod synthgauss;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
