//! Heat-diffusion routing for multihop wireless networks.
//!
//! The crate has two halves. The simulator side ([`sim`], [`policy`],
//! [`scheduling`], [`channel`]) runs slotted-time queueing networks under
//! heat-diffusion and back-pressure policies. The [`thermal`] side solves the
//! nonlinear heat equation on the same directed graph, which predicts the
//! long-run flows of the heat-diffusion policy.

pub mod channel;
pub mod error;
pub mod experiments;
pub mod generate;
pub mod graph;
pub mod policy;
pub mod scenario;
pub mod scheduling;
pub mod sim;
pub mod thermal;

pub use error::{ConfigError, Error, Result};
pub use graph::Network;
