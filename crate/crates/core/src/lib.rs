//! Federated-learning security simulator.
//!
//! Edge devices train a shared classifier; vulnerable devices poison their
//! uploads on a hidden schedule. The server defends with robust aggregation
//! or verify-before-aggregate (VBA), and picks devices either at random or
//! with a recurrent Q-network that learns who tends to upload clean updates
//! cheaply.

pub mod data;
pub mod defense;
pub mod error;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod par;
pub mod seed;
pub mod selection;
pub mod threat;

pub use error::{Error, Result};
