//! Deterministic network engine: layers, forward and backward passes,
//! SGD training and evaluation for the FCDNN and CNN families.

mod layer;
mod network;
mod train;

pub use layer::{LayerSpec, KERNEL};
pub use network::{
    build_cnn, build_cnn_with, build_fcdnn, Activations, Family, Gradients, Network, SizeConfig,
    CNN_FC_UNITS, CNN_INPUT, CNN_OUTPUTS, FCDNN_HIDDEN_LAYERS,
};
pub use train::{evaluate, train, TrainConfig};
pub(crate) use train::{fit, EpochModel};
