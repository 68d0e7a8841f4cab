//! Toy encoder-decoder transformer with analytic gradients.

pub mod checkpoint;
mod layers;
mod model;
mod train;

pub use model::{ToyModelConfig, ToyTransformer};
pub use train::{train_toy, Augmentation, TrainOptions, TrainReport};
