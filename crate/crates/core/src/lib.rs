//! A small deep-learning framework written from first principles: dense and
//! convolutional layers with hand-derived backpropagation, losses and
//! optimizers, a sequential training loop, recurrent cells, toy generative
//! models, synthetic datasets and reproducible run orchestration.
//!
//! All numbers are `f64`; tensors are row-major and images are `[C, H, W]`.

pub mod data;
pub mod error;
pub mod generative;
pub mod layers;
pub mod network;
pub mod numeric;
pub mod optim;
pub mod recurrent;
pub mod rng;
pub mod run;
pub mod tensor;

pub use data::{Dataset, Example, Task};
pub use error::{Error, Result};
pub use layers::{Layer, LayerSpec, Mode};
pub use network::Network;
pub use tensor::Tensor;
