//! Quantum FMCW LiDAR simulation and estimation toolkit.
//!
//! The crate models frequency-modulated light interrogating a moving target,
//! produces NOON-state and coherent-state beat statistics, recovers range and
//! velocity from photon-count records, and evaluates classical and quantum
//! Fisher information with the matching Cramér-Rao bounds.
//!
//! Units are SI throughout: angular frequencies in rad/s, times in s,
//! distances in m.

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod fisher;
pub mod harness;
pub mod quantum;
pub mod sampling;
pub mod waveform;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s (exact).
pub const C: f64 = 299_792_458.0;

/// Wraps an angle into (-π, π].
pub fn wrap_pi(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = x.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}
