//! Minimal dense numeric core: layers, networks with reverse-mode gradients,
//! losses and the Adam optimizer.

mod adam;
mod layer;
pub mod loss;
mod network;

pub use adam::{adam_step, AdamState};
pub use layer::{Activation, BatchNorm1d, Dense, Layer, LabelEmbedding};
pub use loss::{cross_entropy, kl_div, softmax, softmax_t, PROB_FLOOR};
pub use network::Network;
