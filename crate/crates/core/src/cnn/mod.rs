//! Convolutional regression from an encoded channel to stacked unit-norm
//! beam directions.
//!
//! The network is a stack of 3x3 convolution / batch normalization / leaky
//! ReLU blocks, a 3x3 mean pool, one dense layer and a `tanh` head. All
//! gradients are analytic; training uses Adam on minibatches.

pub mod encode;
pub mod io;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use encode::{fcnn_encode, label_decode, label_encode, tcnn_decode, tcnn_encode, Encoding};
pub use io::{LayerRecord, ModelFile};
pub use layers::PoolDivisor;
pub use model::{ArchConfig, CnnModel, Gradients, Tape};
pub use optim::{rmse, rmse_loss, Adam, AdamConfig};
pub use tensor::{FeatureMap, Tensor3};
pub use train::{dataset_geometry, train, TrainConfig, TrainReport, TrainingMeta};
