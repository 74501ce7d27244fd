//! Simulation of phase-dependent quantum optical coherence tomography (QOCT).
//!
//! A Gaussian SPDC biphoton is phase modulated in both arms by electro-optic
//! modulators, which splits its joint spectral amplitude into a network of
//! Bessel-weighted sidebands. The crate computes the resulting Hong-Ou-Mandel
//! coincidence interferogram for layered samples in closed form
//! ([`engine`]), checks it against brute-force quadrature of the coincidence
//! integral ([`oracle`]) and drives the artifact-suppression sweeps, null
//! searches and model fits ([`sweeps`]).
//!
//! Units used throughout the library: angular frequencies in rad/ps, times in
//! ps, angles in radians. Frequencies are stored as detunings from the
//! degenerate centre frequency; the optical carrier only enters through a
//! carrier phase (see [`biphoton::CarrierPhasePolicy`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN. The
// quadrature kernels index several parallel arrays with one loop counter.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod biphoton;
pub mod config;
pub mod engine;
mod error;
pub mod exec;
pub mod oracle;
pub mod sample;
pub mod specfun;
pub mod sweeps;

pub use biphoton::{
    BiphotonSpectrum, CarrierPhasePolicy, ModulationSettings, SidebandEntry, SidebandNetwork,
};
pub use engine::{EngineMode, HomEngine, Interferogram, Scenario};
pub use error::{Error, Result};
pub use exec::Execution;
pub use sample::{Layer, LayerStack};

/// Speed of light in mm/ps.
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;

/// Speed of light in nm/ps.
pub const SPEED_OF_LIGHT_NM_PER_PS: f64 = 299_792.458;

/// Converts a frequency in GHz to an angular frequency in rad/ps.
pub fn ghz_to_rad_per_ps(ghz: f64) -> f64 {
    2.0 * std::f64::consts::PI * ghz * 1e-3
}

/// Converts an angular frequency in rad/ps to GHz.
pub fn rad_per_ps_to_ghz(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI) * 1e3
}
