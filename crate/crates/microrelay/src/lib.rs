//! Phasor-domain microgrid fault simulator and decision-tree protection
//! relay toolkit.

pub mod cart;
pub mod config;
pub mod error;
pub mod features;
pub mod inverter;
pub mod net;
pub mod phasor;
pub mod relay;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
