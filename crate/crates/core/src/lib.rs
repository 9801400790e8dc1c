//! Desk-scale vertical federated learning laboratory: a synchronous
//! split-network training engine, feature reconstruction attacks against the
//! exchanged intermediate outputs, and client-side defenses built on
//! forward-backward splitting.

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod exp;
pub mod metrics;
pub mod nn;
pub mod protocol;

pub use error::{Error, Result};
