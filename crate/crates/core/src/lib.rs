//! Surrogate gradients for ReLU through forward gradient injection.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, the recording tape and stop-gradient;
//! * [`activation`]: closed-form activations and analytic derivatives;
//! * [`sugar`]: ReLU forward with an injected surrogate backward;
//! * [`gradcheck`]: finite-difference verification;
//! * [`mlp`], [`optim`], [`train`]: deep narrow networks and their training loop;
//! * [`toy`]: the dying-ReLU regression benchmark and its Monte Carlo sweeps;
//! * [`analysis`]: activation-count profiles and loss-landscape slices.

pub mod activation;
pub mod analysis;
pub mod error;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod stats;
pub mod sugar;
pub mod tensor;
pub mod toy;
pub mod train;

pub use activation::ActivationKind;
pub use error::{Error, Result};
pub use sugar::{make_activation, Activation, InjectionMode, Method, SugarSpec};
pub use tensor::{Tape, Tensor};
