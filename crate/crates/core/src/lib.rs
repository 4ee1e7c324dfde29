//! Churn prediction from customer usage images.
//!
//! Customers are turned into days × channels images of their usage
//! (`ltl` + `imaging`), classified with small convolutional networks
//! (`architectures` + `nn` + `training`), scored with ROC AUC
//! (`evaluation`), and summarised with an autoencoder whose hidden units
//! are visualised as maximal-activation images (`autoencoder`). `synth`
//! generates seeded event logs to drive all of it.

pub mod architectures;
pub mod autoencoder;
pub mod error;
pub mod evaluation;
pub mod hash;
pub mod imaging;
pub mod ltl;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Dims3, Tensor};
