//! Transmission and distribution market clearing with a strategic producer.

pub mod error;
pub mod network;
pub mod program;
pub mod risk;
pub mod wholesale;
pub mod distribution;
pub mod coupled;
pub mod fixtures;
pub mod mpec;
pub mod cases;
