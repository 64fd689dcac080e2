//! Variational training of mean-field Gaussian MLP policies together with a
//! PAC-Bayes bound on their generalization risk, using the negative log
//! likelihood as the loss.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the bound identities are
//! checked against.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod envs;
pub mod error;
pub mod objective;
pub mod pac_bound;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod variational_net;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Dataset = data::Dataset<f64>;
pub type Weights = variational_net::Weights<f64>;
pub type VariationalParams = variational_net::VariationalParams<f64>;
pub type NoiseDraw = variational_net::NoiseDraw<f64>;
pub type BoundReport = pac_bound::BoundReport<f64>;
pub type TrainTrace = trainer::TrainTrace<f64>;

pub use objective::Hyperparams;
pub use variational_net::NetworkArch;
