//! Unit conversions between SI and the lab units used at the interfaces.

use std::f64::consts::PI;

/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380649e-23;

/// 1 μm⁻² expressed in m⁻².
pub const PER_UM2: f64 = 1e12;

pub fn xi_from_um2(xi_um2: f64) -> f64 {
    xi_um2 * PER_UM2
}

pub fn xi_to_um2(xi: f64) -> f64 {
    xi / PER_UM2
}

pub fn us(t_us: f64) -> f64 {
    t_us * 1e-6
}

pub fn to_us(t: f64) -> f64 {
    t * 1e6
}

pub fn um(x_um: f64) -> f64 {
    x_um * 1e-6
}

pub fn to_um(x: f64) -> f64 {
    x * 1e6
}

/// Cyclic frequency in kHz to angular frequency in rad/s.
pub fn angular_from_khz(f_khz: f64) -> f64 {
    2.0 * PI * f_khz * 1e3
}

/// Angular frequency in rad/s to cyclic frequency in kHz.
pub fn angular_to_khz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e3)
}
