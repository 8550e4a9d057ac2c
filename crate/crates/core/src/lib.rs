//! Dynamic-phasor model of a grid-forming converter on a series-compensated line.

pub mod dp;
pub mod equilibrium;
pub mod error;
pub mod gfc;
pub mod integrate;
pub mod linalg;
pub mod modal;
pub mod network;
pub mod oracle;
pub mod params;
pub mod scalar;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DpSet64 = dp::DpSet<f64>;
pub type DpSet32 = dp::DpSet<f32>;
pub type GfcParams64 = params::GfcParams<f64>;
pub type NetworkParams64 = params::NetworkParams<f64>;
pub type GfcState64 = gfc::GfcState<f64>;
