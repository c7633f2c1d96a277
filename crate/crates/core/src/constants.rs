//! Physical constants and unit helpers.
//!
//! All internal quantities are SI: seconds, meters, kilograms, joules,
//! angular frequencies in rad/s. The helpers below convert from the units
//! used at the interfaces (µK for trap depths, µs/ms for times, MHz for
//! frequencies quoted as ω/2π).

use std::f64::consts::TAU;

/// Boltzmann constant (J/K), CODATA 2018 exact.
pub const K_B: f64 = 1.380_649e-23;

/// Reduced Planck constant (J·s), CODATA 2018 exact.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Atomic mass unit (kg).
pub const AMU: f64 = 1.660_539_068_92e-27;

/// Mass of ⁸⁵Rb (kg).
pub const MASS_RB85: f64 = 84.911_789_738 * AMU;

/// Energy of a temperature expressed in µK (J).
#[inline]
pub fn uk(t_uk: f64) -> f64 {
    t_uk * 1e-6 * K_B
}

/// Inverse of [`uk`]: energy in J expressed as a temperature in µK.
#[inline]
pub fn to_uk(e: f64) -> f64 {
    e / (1e-6 * K_B)
}

/// Angular frequency of a linear frequency quoted in MHz (rad/s).
#[inline]
pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e6
}

/// Microseconds to seconds.
#[inline]
pub fn us(t: f64) -> f64 {
    t * 1e-6
}

/// Milliseconds to seconds.
#[inline]
pub fn ms(t: f64) -> f64 {
    t * 1e-3
}
