//! Independent oracles and measurement helpers shared by the integration
//! tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use squeezefit::phasespace::snapshot_at;
use squeezefit::pulse::make_squeeze_pulse;
use squeezefit::sde::{simulate_ensemble, simulate_trajectory};
use squeezefit::*;

pub const OMEGA0: f64 = 4.08e5;
pub const K_B: f64 = 1.380649e-23;

/// Noise-free, undamped parameters.
pub fn cold(xi_um2: f64) -> OscillatorParams {
    OscillatorParams::new(OMEGA0, 0.0, 4.8e-19, 0.0, xi_um2 * 1e12).unwrap()
}

/// Mean frequency (rad/s) from linearly interpolated upward zero crossings.
pub fn zero_crossing_frequency(tr: &Trajectory) -> f64 {
    let s = &tr.samples;
    let crossings: Vec<f64> = s
        .windows(2)
        .filter(|w| w[0].q < 0.0 && w[1].q >= 0.0)
        .map(|w| w[0].t + (w[1].t - w[0].t) * (-w[0].q) / (w[1].q - w[0].q))
        .collect();
    let n = crossings.len() - 1;
    2.0 * PI * n as f64 / (crossings[n] - crossings[0])
}

/// First-order backbone shift `3 xi A^2 / 8`.
pub fn backbone_shift(xi_um2: f64, a_um: f64) -> f64 {
    3.0 * xi_um2 * a_um * a_um / 8.0
}

/// Relative frequency shift measured over `periods` periods of free
/// oscillation from `(a_um, 0)`.
pub fn measured_backbone_shift(xi_um2: f64, a_um: f64, periods: f64) -> f64 {
    let p = cold(xi_um2);
    let cfg = SimConfig::new(periods * 2.0 * PI / OMEGA0, 0, 1)
        .with_steps(1e-9, 1e-8)
        .with_integrator(Integrator::Heun)
        .with_init(InitCondition::Fixed {
            q: a_um * 1e-6,
            v: 0.0,
        });
    let tr = simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
    zero_crossing_frequency(&tr) / OMEGA0 - 1.0
}

/// State right after the squeeze pulse for a noise-free, undamped harmonic
/// particle starting at `(q0, v0)`.
pub fn squeezed_state(q0: f64, v0: f64) -> [f64; 2] {
    let p = cold(0.0);
    let pulse = make_squeeze_pulse(&p, 0.784, 0.0).unwrap();
    let cfg = SimConfig::new(pulse.t_end() + 1e-6, 0, 1)
        .with_steps(1e-9, 1e-8)
        .with_integrator(Integrator::Heun)
        .with_init(InitCondition::Fixed { q: q0, v: v0 });
    let e = simulate_ensemble(&p, &pulse, &cfg).unwrap();
    snapshot_at(&e, 0.0).unwrap().cloud.points[0]
}

/// Reduced pulse frequency `omega0 sqrt(1 - 0.784)`.
pub fn omega1() -> f64 {
    OMEGA0 * (1.0f64 - 0.784).sqrt()
}

/// Ensemble variance of `q` averaged over snapshots taken every
/// `every` seconds from `burn_in` to the end of the run.
pub fn time_averaged_variance(e: &Ensemble, burn_in: f64, every: f64) -> f64 {
    let dt = e.config.sample_dt;
    let n = e.trajectories[0].samples.len();
    let first = (burn_in / dt).ceil() as usize;
    let stride = ((every / dt).round() as usize).max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    for k in (first..n).step_by(stride) {
        let qs: Vec<f64> = e.trajectories.iter().map(|t| t.samples[k].q).collect();
        let mean = qs.iter().sum::<f64>() / qs.len() as f64;
        total += qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (qs.len() - 1) as f64;
        count += 1;
    }
    total / count as f64
}

pub fn equipartition_variance(p: &OscillatorParams) -> f64 {
    K_B * p.temperature() / (p.mass() * p.omega0() * p.omega0())
}

/// Chi-square statistic of `values` in `[0, 1]` against 10 equal bins.
pub fn uniformity_chi2(values: &[f64]) -> f64 {
    let mut bins = [0usize; 10];
    for &v in values {
        bins[((v * 10.0) as usize).min(9)] += 1;
    }
    let expected = values.len() as f64 / 10.0;
    bins.iter()
        .map(|&b| (b as f64 - expected).powi(2) / expected)
        .sum()
}

/// Upper 1% point of chi-square with 9 degrees of freedom.
pub const CHI2_9_CRIT_001: f64 = 21.666;

/// Kolmogorov tail by direct summation of 100 terms.
pub fn kolmogorov_series(lambda: f64) -> f64 {
    2.0 * (1..=100)
        .map(|j| {
            let j = j as f64;
            (if j as i64 % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * j * j * lambda * lambda).exp()
        })
        .sum::<f64>()
}
