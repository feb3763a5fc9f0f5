//! Siamese patch encoder: layers, model, optimizer, pair sampling, checkpoints.

pub mod adadelta;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod sampler;
pub mod siamese;
pub mod train;

pub use adadelta::AdaDelta;
pub use layers::{batchnorm_forward_raw, BnGranularity, Layer, Mode};
pub use model::{EncoderModel, ForwardCache, Gradients};
pub use sampler::{sample_pairs, SamplerOptions};
pub use siamese::{loss_and_gradients, siamese_backward, siamese_distance, siamese_distance_eval, train_step, PairBatch};
