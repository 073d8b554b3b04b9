//! Simulation, scaling limits and calibration for a one-sided limit order book
//! driven by price moves and order placements on a tick grid.

pub mod calibration;
pub mod config;
pub mod error;
pub mod firstorder;
pub mod fluctuations;
pub mod grid;
pub mod linalg;
pub mod microsim;
pub mod params;
pub mod pipeline;
pub mod presets;
pub mod rng;
pub mod secondorder;
pub mod stats;
pub mod study;

pub use error::{LobError, Result};
