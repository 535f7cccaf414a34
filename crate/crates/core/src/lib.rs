//! Recurrent attention agent that learns which views of a shape to look at
//! before classifying it, trained with REINFORCE plus boundary, confidence
//! and view-separation schemes over precomputed per-view feature grids.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod agent;
pub mod confidence;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod learning;
pub mod oracle;
pub mod scalar;
pub mod viewspace;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Graph64 = diffcore::Graph<f64>;
pub type Graph32 = diffcore::Graph<f32>;
pub type Location64 = viewspace::Location<f64>;
pub type Location32 = viewspace::Location<f32>;
pub type AgentParams64 = agent::AgentParams<f64>;
pub type AgentParams32 = agent::AgentParams<f32>;
pub type EpisodeTrace64 = agent::EpisodeTrace<f64>;
pub type SgdState64 = diffcore::SgdState<f64>;
