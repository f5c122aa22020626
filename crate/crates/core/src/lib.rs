pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod math;
pub mod network;
pub mod params;
pub mod runner;
pub mod scenario;
pub mod seed;
pub mod strategies;
pub mod train;

pub use error::{Error, Result};
