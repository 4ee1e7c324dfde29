//! Dense-tensor neural network engine for the layer set used by the
//! classifiers and the autoencoder.

pub mod layers;
pub mod network;
pub mod params;
pub mod spec;

pub use network::{ForwardCache, Network};
pub use params::{GradientSet, ParamBlock, Parameters};
pub use spec::{ActivationKind, Conv2dSpec, LayerSpec, PoolSpec};
