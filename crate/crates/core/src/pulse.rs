//! Squeezing pulse: a step reduction of the trap stiffness held for a quarter
//! period of the reduced oscillation frequency.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sde::OscillatorParams;

/// Time-windowed stiffness modulation. During `[t_start, t_start + duration]`
/// the restoring force is multiplied by `1 + s_q`, elsewhere by 1.
///
/// `s_q` is negative for a power reduction; the trap must stay confining, so
/// `1 + s_q > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    s_q: f64,
    t_start: f64,
    duration: f64,
}

impl PulseSchedule {
    pub fn new(s_q: f64, t_start: f64, duration: f64) -> Result<Self> {
        if !s_q.is_finite() || 1.0 + s_q <= 0.0 {
            return Err(invalid(
                "s_q",
                format!("1 + s_q must be > 0, got s_q = {s_q}"),
            ));
        }
        if !t_start.is_finite() {
            return Err(invalid("t_start", "must be finite"));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid("duration", format!("must be > 0, got {duration}")));
        }
        Ok(Self {
            s_q,
            t_start,
            duration,
        })
    }

    /// A schedule that never modulates the stiffness. The window is kept
    /// nominal (zero-length pulses are not representable) at `[0, 1e-9]` s.
    pub fn inactive() -> Self {
        Self {
            s_q: 0.0,
            t_start: 0.0,
            duration: 1e-9,
        }
    }

    pub fn s_q(&self) -> f64 {
        self.s_q
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// End of the pulse window; snapshot times are measured from here.
    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn stiffness_factor(&self, t: f64) -> f64 {
        stiffness_factor(t, self)
    }
}

/// Multiplier applied to the conservative force at time `t`.
pub fn stiffness_factor(t: f64, pulse: &PulseSchedule) -> f64 {
    if t >= pulse.t_start && t <= pulse.t_start + pulse.duration {
        1.0 + pulse.s_q
    } else {
        1.0
    }
}

/// Oscillation frequency during the pulse, `omega0 * sqrt(1 + s_q)`.
pub fn pulse_frequency(omega0: f64, s_q: f64) -> Result<f64> {
    if !(omega0.is_finite() && omega0 > 0.0) {
        return Err(invalid("omega0", "must be > 0"));
    }
    if !s_q.is_finite() || 1.0 + s_q <= 0.0 {
        return Err(invalid(
            "s_q",
            format!(
                "anti-trapping pulse (1 + s_q = {}) is unsupported",
                1.0 + s_q
            ),
        ));
    }
    Ok(omega0 * (1.0 + s_q).sqrt())
}

/// Quarter period at angular frequency `omega1`: `pi / (2 omega1)`.
pub fn quarter_period_duration(omega1: f64) -> Result<f64> {
    if !(omega1.is_finite() && omega1 > 0.0) {
        return Err(invalid("omega1", format!("must be > 0, got {omega1}")));
    }
    Ok(FRAC_PI_2 / omega1)
}

/// Builds the squeeze pulse for a fractional laser power drop starting at
/// `t_start`. The stiffness scales with power, so `s_q = -power_drop`, and the
/// pulse lasts a quarter period at the reduced frequency.
pub fn make_squeeze_pulse(
    params: &OscillatorParams,
    power_drop: f64,
    t_start: f64,
) -> Result<PulseSchedule> {
    if !(0.0..1.0).contains(&power_drop) {
        return Err(invalid(
            "power_drop",
            format!("must lie in [0, 1), got {power_drop}"),
        ));
    }
    let s_q = -power_drop;
    let omega1 = pulse_frequency(params.omega0(), s_q)?;
    PulseSchedule::new(s_q, t_start, quarter_period_duration(omega1)?)
}
