//! Stochastic equation of motion for a damped, thermally driven Duffing
//! oscillator with a time-dependent stiffness:
//!
//! ```text
//! dq = v dt
//! dv = [-gamma0 v + k(t) (-omega0^2 q - xi omega0^2 q^3)] dt + sqrt(2 gamma0 k_B T / m) dW
//! ```
//!
//! where `k(t)` is the pulse stiffness factor. Every trajectory owns a
//! ChaCha8 stream selected by `(seed, index)`, so a trajectory can be
//! regenerated in isolation and ensembles do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pulse::PulseSchedule;
use crate::units::{xi_from_um2, K_B};

/// Largest accepted `|xi| k_B T / (m omega0^2)` for thermal initialisation,
/// i.e. the softening barrier must sit at least 5 k_B T above the well bottom.
pub const BARRIER_PROXIMITY_LIMIT: f64 = 0.05;

/// Upper bound on `omega0 * dt`.
pub const MAX_OMEGA_DT: f64 = 0.05;

/// Physical parameters of the trap and particle (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    omega0: f64,
    gamma0: f64,
    mass: f64,
    temperature: f64,
    xi: f64,
}

impl OscillatorParams {
    /// `omega0` in rad/s, `gamma0` in 1/s, `mass` in kg, `temperature` in K,
    /// `xi` in 1/m².
    pub fn new(omega0: f64, gamma0: f64, mass: f64, temperature: f64, xi: f64) -> Result<Self> {
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(invalid("omega0", format!("must be > 0, got {omega0}")));
        }
        if !(gamma0.is_finite() && gamma0 >= 0.0) {
            return Err(invalid("gamma0", format!("must be >= 0, got {gamma0}")));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(invalid("mass", format!("must be > 0, got {mass}")));
        }
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(invalid(
                "temperature",
                format!("must be >= 0, got {temperature}"),
            ));
        }
        if !xi.is_finite() {
            return Err(invalid("xi", "must be finite"));
        }
        Ok(Self {
            omega0,
            gamma0,
            mass,
            temperature,
            xi,
        })
    }

    /// The measured trap: omega0 = 4.08e5 rad/s, gamma0 = 619 /s,
    /// m = 4.8e-19 kg, T = 300 K, and no non-linearity.
    pub fn reference_trap() -> Self {
        Self {
            omega0: 4.08e5,
            gamma0: 619.0,
            mass: 4.8e-19,
            temperature: 300.0,
            xi: 0.0,
        }
    }

    pub fn with_xi(self, xi: f64) -> Result<Self> {
        Self::new(self.omega0, self.gamma0, self.mass, self.temperature, xi)
    }

    pub fn with_xi_um2(self, xi_um2: f64) -> Result<Self> {
        self.with_xi(xi_from_um2(xi_um2))
    }

    pub fn with_gamma0(self, gamma0: f64) -> Result<Self> {
        Self::new(self.omega0, gamma0, self.mass, self.temperature, self.xi)
    }

    pub fn with_mass(self, mass: f64) -> Result<Self> {
        Self::new(self.omega0, self.gamma0, mass, self.temperature, self.xi)
    }

    pub fn with_temperature(self, temperature: f64) -> Result<Self> {
        Self::new(self.omega0, self.gamma0, self.mass, temperature, self.xi)
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Equipartition position variance `k_B T / (m omega0^2)`, m².
    pub fn thermal_position_variance(&self) -> f64 {
        K_B * self.temperature / (self.mass * self.omega0 * self.omega0)
    }

    /// Maxwell velocity variance `k_B T / m`, m²/s².
    pub fn thermal_velocity_variance(&self) -> f64 {
        K_B * self.temperature / self.mass
    }

    /// Position of the softening barrier `1/sqrt(|xi|)` when `xi < 0`.
    pub fn barrier(&self) -> Option<f64> {
        (self.xi < 0.0).then(|| 1.0 / (-self.xi).sqrt())
    }

    /// Potential per unit mass, `omega0^2 q^2 / 2 + xi omega0^2 q^4 / 4`.
    pub fn potential(&self, q: f64) -> f64 {
        let w2 = self.omega0 * self.omega0;
        0.5 * w2 * q * q + 0.25 * self.xi * w2 * q.powi(4)
    }

    /// Mechanical energy per unit mass.
    pub fn energy(&self, s: &State) -> f64 {
        0.5 * s.v * s.v + self.potential(s.q)
    }

    /// Escape radius used when the configuration does not set one.
    pub fn default_escape_radius(&self) -> f64 {
        match self.barrier() {
            Some(b) => b,
            None if self.temperature > 0.0 => 200.0 * self.thermal_position_variance().sqrt(),
            None => f64::INFINITY,
        }
    }
}

/// Phase-space point at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: f64,
    pub v: f64,
    pub t: f64,
}

impl State {
    pub fn new(q: f64, v: f64, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.v.is_finite() && self.t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Euler–Maruyama with symplectic ordering: velocity first, then position
    /// with the updated velocity.
    #[default]
    EulerMaruyama,
    /// Predictor–corrector (stochastic Heun) for additive noise.
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitCondition {
    /// Exact Boltzmann sample of the unpulsed trap.
    #[default]
    Thermal,
    Fixed {
        q: f64,
        v: f64,
    },
}

/// Integration and sampling settings for one ensemble.
///
/// Trajectories start at `-t_pre` and run to `t_end`; states are recorded
/// every `sample_dt`, which must be an integer multiple of `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub sample_dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub n_trajectories: usize,
    pub integrator: Integrator,
    pub init: InitCondition,
    pub t_pre: f64,
    /// `None` selects [`OscillatorParams::default_escape_radius`].
    pub escape_radius: Option<f64>,
}

impl SimConfig {
    /// Default step 5 ns and sampling interval 0.1 μs.
    pub fn new(t_end: f64, seed: u64, n_trajectories: usize) -> Self {
        Self {
            dt: 5e-9,
            sample_dt: 1e-7,
            t_end,
            seed,
            n_trajectories,
            integrator: Integrator::EulerMaruyama,
            init: InitCondition::Thermal,
            t_pre: 0.0,
            escape_radius: None,
        }
    }

    pub fn with_steps(mut self, dt: f64, sample_dt: f64) -> Self {
        self.dt = dt;
        self.sample_dt = sample_dt;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_init(mut self, init: InitCondition) -> Self {
        self.init = init;
        self
    }

    pub fn with_t_pre(mut self, t_pre: f64) -> Self {
        self.t_pre = t_pre;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trajectories(mut self, n: usize) -> Self {
        self.n_trajectories = n;
        self
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn with_escape_radius(mut self, radius: Option<f64>) -> Self {
        self.escape_radius = radius;
        self
    }

    pub fn t_start(&self) -> f64 {
        -self.t_pre
    }

    /// Number of integrator steps per recorded sample.
    pub fn substeps(&self) -> usize {
        (self.sample_dt / self.dt).round().max(1.0) as usize
    }

    /// Step actually used: `sample_dt / substeps`.
    pub fn effective_dt(&self) -> f64 {
        self.sample_dt / self.substeps() as f64
    }

    pub fn n_samples(&self) -> usize {
        ((self.t_end - self.t_start()) / self.sample_dt + 1e-9).floor() as usize + 1
    }

    pub fn validate(&self, params: &OscillatorParams) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_pre.is_finite() && self.t_pre >= 0.0) {
            return Err(invalid(
                "t_pre",
                format!("must be >= 0, got {}", self.t_pre),
            ));
        }
        if !(self.sample_dt.is_finite() && self.sample_dt >= self.dt) {
            return Err(invalid("sample_dt", "must satisfy dt <= sample_dt"));
        }
        if !(self.t_end.is_finite() && self.t_end - self.t_start() >= self.sample_dt) {
            return Err(invalid(
                "t_end",
                "simulated span must cover at least one sample interval",
            ));
        }
        let ratio = self.sample_dt / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(invalid(
                "sample_dt",
                format!("must be an integer multiple of dt (ratio {ratio})"),
            ));
        }
        if self.n_trajectories == 0 {
            return Err(invalid("n_trajectories", "must be >= 1"));
        }
        let wdt = params.omega0() * self.dt;
        if wdt >= MAX_OMEGA_DT {
            return Err(invalid(
                "dt",
                format!("omega0*dt = {wdt} must be < {MAX_OMEGA_DT}"),
            ));
        }
        if let InitCondition::Fixed { q, v } = self.init {
            if !(q.is_finite() && v.is_finite()) {
                return Err(invalid("init", "fixed state must be finite"));
            }
        }
        if let Some(r) = self.escape_radius {
            if !(r > 0.0) {
                return Err(invalid("escape_radius", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// One realisation sampled on the grid `t_start + k * sample_dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: OscillatorParams,
    pub index: u64,
    pub t_start: f64,
    pub sample_dt: f64,
    pub samples: Vec<State>,
    /// Time at which `|q|` first exceeded the escape radius; integration stops
    /// there and `samples` ends at the last state inside the trap.
    pub escaped_at: Option<f64>,
}

impl Trajectory {
    pub fn escaped(&self) -> bool {
        self.escaped_at.is_some()
    }

    pub fn t_last(&self) -> f64 {
        self.samples.last().map_or(self.t_start, |s| s.t)
    }
}

/// Independent trajectories sharing parameters, pulse and configuration,
/// ordered by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub params: OscillatorParams,
    pub pulse: PulseSchedule,
    pub config: SimConfig,
    pub trajectories: Vec<Trajectory>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn escaped_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.escaped()).count()
    }
}

/// Deterministic part of the acceleration.
pub fn drift_acceleration(s: &State, p: &OscillatorParams, stiffness: f64) -> f64 {
    let w2 = p.omega0 * p.omega0;
    -p.gamma0 * s.v - stiffness * w2 * (s.q + p.xi * s.q * s.q * s.q)
}

/// Velocity-noise scale `sqrt(2 gamma0 k_B T / m)`, (m/s)/√s.
pub fn diffusion_amplitude(p: &OscillatorParams) -> f64 {
    (2.0 * p.gamma0 * K_B * p.temperature / p.mass).sqrt()
}

/// Noise stream for trajectory `index` of an ensemble seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `(q, v)` from the Boltzmann distribution of the unpulsed trap.
///
/// The velocity is Maxwellian. The position is rejection-sampled from
/// `exp(-m V(q) / k_B T)`: for `xi >= 0` the harmonic Gaussian is the
/// proposal; for `xi < 0` the proposal variance is doubled and truncated at
/// the barrier, which keeps the acceptance ratio bounded by one.
pub fn sample_thermal_state<R: Rng + ?Sized>(p: &OscillatorParams, rng: &mut R) -> Result<State> {
    if !(p.temperature > 0.0) {
        return Err(invalid("temperature", "thermal initialisation needs T > 0"));
    }
    let var_q = p.thermal_position_variance();
    let sigma_q = var_q.sqrt();
    let sigma_v = p.thermal_velocity_variance().sqrt();
    let xi = p.xi;

    let q = if xi >= 0.0 {
        loop {
            let q = sigma_q * rng.sample::<f64, _>(StandardNormal);
            let accept = (-xi * q.powi(4) / (4.0 * var_q)).exp();
            if rng.random::<f64>() < accept {
                break q;
            }
        }
    } else {
        let limit = BARRIER_PROXIMITY_LIMIT / -xi;
        if var_q >= limit {
            return Err(Error::BarrierProximity {
                thermal_var: var_q,
                limit,
            });
        }
        let proposal_sigma = std::f64::consts::SQRT_2 * sigma_q;
        loop {
            let q = proposal_sigma * rng.sample::<f64, _>(StandardNormal);
            let u = -xi * q * q;
            if u >= 1.0 {
                continue;
            }
            let accept = (-(q * q / (4.0 * var_q)) * (1.0 - u)).exp();
            if rng.random::<f64>() < accept {
                break q;
            }
        }
    };
    let v = sigma_v * rng.sample::<f64, _>(StandardNormal);
    Ok(State { q, v, t: 0.0 })
}

/// Precomputed single-step update for fixed parameters and step size.
#[derive(Debug, Clone, Copy)]
struct Stepper<'a> {
    params: &'a OscillatorParams,
    pulse: &'a PulseSchedule,
    integrator: Integrator,
    dt: f64,
    noise_scale: f64,
}

impl<'a> Stepper<'a> {
    fn new(
        params: &'a OscillatorParams,
        pulse: &'a PulseSchedule,
        integrator: Integrator,
        dt: f64,
    ) -> Self {
        Self {
            params,
            pulse,
            integrator,
            dt,
            noise_scale: diffusion_amplitude(params) * dt.sqrt(),
        }
    }

    #[inline]
    fn advance(&self, s: &State, t: f64, normal: f64) -> State {
        let dt = self.dt;
        let kick = self.noise_scale * normal;
        match self.integrator {
            Integrator::EulerMaruyama => {
                // Stiffness sampled at the step midpoint so the pulse window is
                // resolved to within dt/2.
                let k = self.pulse.stiffness_factor(t + 0.5 * dt);
                let a = drift_acceleration(s, self.params, k);
                let v = s.v + a * dt + kick;
                State {
                    q: s.q + v * dt,
                    v,
                    t: t + dt,
                }
            }
            Integrator::Heun => {
                let k0 = self.pulse.stiffness_factor(t);
                let k1 = self.pulse.stiffness_factor(t + dt);
                let a0 = drift_acceleration(s, self.params, k0);
                let pred = State {
                    q: s.q + s.v * dt,
                    v: s.v + a0 * dt + kick,
                    t: t + dt,
                };
                let a1 = drift_acceleration(&pred, self.params, k1);
                State {
                    q: s.q + 0.5 * (s.v + pred.v) * dt,
                    v: s.v + 0.5 * (a0 + a1) * dt + kick,
                    t: t + dt,
                }
            }
        }
    }
}

/// Advances `s` by one step of size `dt` using the standard-normal variate
/// `normal` for the Wiener increment.
pub fn step(
    s: &State,
    params: &OscillatorParams,
    pulse: &PulseSchedule,
    integrator: Integrator,
    dt: f64,
    normal: f64,
) -> Result<State> {
    let next = Stepper::new(params, pulse, integrator, dt).advance(s, s.t, normal);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Divergence { index: 0, t: s.t })
    }
}

/// Integrates trajectory `index`, recording a sample every `sample_dt`.
pub fn simulate_trajectory(
    params: &OscillatorParams,
    pulse: &PulseSchedule,
    cfg: &SimConfig,
    index: u64,
) -> Result<Trajectory> {
    cfg.validate(params)?;
    integrate(params, pulse, cfg, index)
}

fn integrate(
    params: &OscillatorParams,
    pulse: &PulseSchedule,
    cfg: &SimConfig,
    index: u64,
) -> Result<Trajectory> {
    let mut rng = trajectory_rng(cfg.seed, index);
    let t0 = cfg.t_start();
    let mut state = match cfg.init {
        InitCondition::Thermal => sample_thermal_state(params, &mut rng)?,
        InitCondition::Fixed { q, v } => State { q, v, t: t0 },
    };
    state.t = t0;

    let substeps = cfg.substeps();
    let dt = cfg.effective_dt();
    let n_samples = cfg.n_samples();
    let escape = cfg
        .escape_radius
        .unwrap_or_else(|| params.default_escape_radius());
    let stepper = Stepper::new(params, pulse, cfg.integrator, dt);
    let noisy = stepper.noise_scale > 0.0;

    let mut samples = Vec::with_capacity(n_samples);
    samples.push(state);
    let mut escaped_at = None;
    'outer: for k in 1..n_samples {
        let base = (k - 1) * substeps;
        for j in 0..substeps {
            let t = t0 + (base + j) as f64 * dt;
            let normal = if noisy {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            state = stepper.advance(&state, t, normal);
            if !(state.q.is_finite() && state.v.is_finite()) {
                return Err(Error::Divergence { index, t });
            }
            if state.q.abs() > escape {
                escaped_at = Some(t + dt);
                break 'outer;
            }
        }
        state.t = t0 + k as f64 * cfg.sample_dt;
        samples.push(state);
    }

    Ok(Trajectory {
        params: *params,
        index,
        t_start: t0,
        sample_dt: cfg.sample_dt,
        samples,
        escaped_at,
    })
}

/// Simulates `cfg.n_trajectories` trajectories in parallel on the current
/// rayon pool. The result does not depend on the pool size.
pub fn simulate_ensemble(
    params: &OscillatorParams,
    pulse: &PulseSchedule,
    cfg: &SimConfig,
) -> Result<Ensemble> {
    cfg.validate(params)?;
    let results: Vec<Result<Trajectory>> = (0..cfg.n_trajectories as u64)
        .into_par_iter()
        .map(|i| integrate(params, pulse, cfg, i))
        .collect();
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        params: *params,
        pulse: *pulse,
        config: *cfg,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn assert_rel(actual: f64, expected: f64, tol: f64) {
        let rel = ((actual - expected) / expected).abs();
        assert!(rel <= tol, "{actual} vs {expected}: rel {rel:e} > {tol:e}");
    }

    #[test]
    fn drift_damping_only_at_origin() {
        let p = OscillatorParams::reference_trap();
        let a = drift_acceleration(&State::new(0.0, 1.0, 0.0), &p, 1.0);
        assert_rel(a, -619.0, 1e-15);
    }

    #[test]
    fn drift_harmonic_and_duffing() {
        let p = OscillatorParams::reference_trap();
        let s = State::new(1e-6, 0.0, 0.0);
        assert_rel(drift_acceleration(&s, &p, 1.0), -1.6646e5, 1e-4);
        let soft = p.with_xi_um2(-0.1).unwrap();
        assert_rel(drift_acceleration(&s, &soft, 1.0), -1.4982e5, 1e-4);
        assert_rel(drift_acceleration(&s, &soft, 1.0), -1.6646e5 * 0.9, 1e-4);
        // Stiffness scales only the conservative part.
        let moving = State::new(1e-6, 2.0, 0.0);
        let full = drift_acceleration(&moving, &p, 1.0);
        let soft_k = drift_acceleration(&moving, &p, 0.216);
        assert_rel(soft_k + 619.0 * 2.0, 0.216 * (full + 619.0 * 2.0), 1e-12);
    }

    #[test]
    fn diffusion_amplitude_values() {
        let p = OscillatorParams::reference_trap();
        assert_eq!(diffusion_amplitude(&p.with_gamma0(0.0).unwrap()), 0.0);
        assert_eq!(diffusion_amplitude(&p.with_temperature(0.0).unwrap()), 0.0);
        // sqrt(2 * 619 * 1.380649e-23 * 300 / 4.8e-19) by hand: 3.26843
        assert_rel(diffusion_amplitude(&p), 3.26843, 1e-5);
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(OscillatorParams::new(0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(OscillatorParams::new(1.0, -1.0, 1.0, 1.0, 0.0).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, 1.0, -1.0, 0.0).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, 1.0, 1.0, f64::NAN).is_err());
        assert!(OscillatorParams::new(1.0, 0.0, 1.0, 0.0, -3.0).is_ok());
    }

    fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn thermal_state_equipartition() {
        let p = OscillatorParams::reference_trap();
        assert_rel(p.thermal_position_variance(), 5.184e-14, 1e-3);
        let mut rng = trajectory_rng(7, 0);
        let draws: Vec<State> = (0..100_000)
            .map(|_| sample_thermal_state(&p, &mut rng).unwrap())
            .collect();
        assert_rel(
            variance(draws.iter().map(|s| s.q)),
            p.thermal_position_variance(),
            0.03,
        );
        assert_rel(
            variance(draws.iter().map(|s| s.v)),
            p.thermal_velocity_variance(),
            0.03,
        );
    }

    #[test]
    fn thermal_state_frozen_bath() {
        let p = OscillatorParams::reference_trap()
            .with_temperature(1e-6)
            .unwrap();
        let mut rng = trajectory_rng(1, 3);
        let n = 10_000;
        let ms: f64 = (0..n)
            .map(|_| sample_thermal_state(&p, &mut rng).unwrap().q.powi(2))
            .sum::<f64>()
            / n as f64;
        // sqrt(k_B T / (m w0^2)) at 1 uK is 13.2 pm, ~1e-4 of the room-temperature spread.
        assert_rel(ms, p.thermal_position_variance(), 0.05);
        assert!(ms.sqrt() < 1.5e-11, "rms {}", ms.sqrt());

        let colder = p.with_temperature(1e-9).unwrap();
        let worst = (0..1000)
            .map(|_| sample_thermal_state(&colder, &mut rng).unwrap().q.abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-12, "max |q| {worst:e}");
    }

    #[test]
    fn thermal_state_softening_matches_boltzmann_quadrature() {
        // Strongly softened trap (|xi| sigma^2 = 0.04): compare the sampled
        // <q^2> with direct quadrature of the truncated Boltzmann weight.
        let base = OscillatorParams::reference_trap();
        let var = base.thermal_position_variance();
        let p = base.with_xi(-0.04 / var).unwrap();
        let b = p.barrier().unwrap();
        let weight = |q: f64| (-p.mass() * p.potential(q) / (K_B * p.temperature())).exp();
        let n = 20_000;
        let h = 2.0 * b / n as f64;
        let (mut z, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let q = -b + (i as f64 + 0.5) * h;
            z += weight(q);
            m2 += q * q * weight(q);
        }
        let expected = m2 / z;
        let mut rng = trajectory_rng(11, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_thermal_state(&p, &mut rng).unwrap().q)
            .collect();
        assert!(draws.iter().all(|q| q.abs() < b));
        assert_rel(variance(draws.iter().copied()), expected, 0.03);
        assert!(expected > var * 1.05);
    }

    #[test]
    fn thermal_state_rejects_barrier_proximity() {
        let base = OscillatorParams::reference_trap();
        let var = base.thermal_position_variance();
        let p = base.with_xi(-0.2 / var).unwrap();
        let mut rng = trajectory_rng(0, 0);
        assert!(matches!(
            sample_thermal_state(&p, &mut rng),
            Err(Error::BarrierProximity { .. })
        ));
        // The widest sweep point of the default grid is still accepted.
        let edge = base.with_xi_um2(-0.35).unwrap();
        assert!(sample_thermal_state(&edge, &mut rng).is_ok());
    }

    #[test]
    fn single_step_matches_cosine_expansion() {
        let p = OscillatorParams::new(4.08e5, 0.0, 4.8e-19, 0.0, 0.0).unwrap();
        let dt = 1e-3 / p.omega0();
        let a = 1e-6;
        let s = State::new(a, 0.0, 0.0);
        let expected = a * (1.0 - 0.5 * 1e-6);
        let off = PulseSchedule::inactive();
        for integ in [Integrator::EulerMaruyama, Integrator::Heun] {
            let next = step(&s, &p, &off, integ, dt, 0.0).unwrap();
            assert_rel(next.q, expected, 1e-6);
            assert_rel(next.t, dt, 1e-12);
        }
    }

    #[test]
    fn free_flight() {
        let p = OscillatorParams::new(1e-3, 0.0, 1.0, 0.0, 0.0).unwrap();
        let s = State::new(0.0, 1.0, 0.0);
        let next = step(
            &s,
            &p,
            &PulseSchedule::inactive(),
            Integrator::EulerMaruyama,
            1e-6,
            0.0,
        )
        .unwrap();
        assert_rel(next.q, 1e-6, 1e-9);
    }

    #[test]
    fn step_reports_divergence() {
        let p = OscillatorParams::reference_trap();
        let s = State::new(f64::MAX, 0.0, 2e-6);
        let err = step(
            &s,
            &p,
            &PulseSchedule::inactive(),
            Integrator::EulerMaruyama,
            5e-9,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { t, .. } if t == 2e-6));
    }

    #[test]
    fn config_validation() {
        let p = OscillatorParams::reference_trap();
        let ok = SimConfig::new(1e-5, 0, 1);
        assert!(ok.validate(&p).is_ok());
        assert_eq!(ok.substeps(), 20);
        assert_eq!(ok.n_samples(), 101);
        assert!(ok.with_steps(2e-7, 1e-7).validate(&p).is_err());
        assert!(ok.with_steps(1.5e-7, 1.5e-7).validate(&p).is_err()); // omega0 dt = 0.061
        assert!(ok.with_steps(3e-9, 1e-7).validate(&p).is_err());
        assert!(ok.with_trajectories(0).validate(&p).is_err());
        assert!(ok.with_t_end(5e-8).validate(&p).is_err());
        assert!(ok.with_t_end(5e-8).with_t_pre(1e-7).validate(&p).is_ok());
    }

    #[test]
    fn trajectory_is_deterministic() {
        let p = OscillatorParams::reference_trap()
            .with_xi_um2(-0.1)
            .unwrap();
        let pulse = crate::pulse::make_squeeze_pulse(&p, 0.784, 0.0).unwrap();
        let cfg = SimConfig::new(2e-5, 99, 4);
        let a = simulate_trajectory(&p, &pulse, &cfg, 3).unwrap();
        let b = simulate_trajectory(&p, &pulse, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&p, &pulse, &cfg, 2).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn sample_grid_spacing() {
        let p = OscillatorParams::reference_trap();
        let cfg = SimConfig::new(3e-5, 1, 1).with_t_pre(2e-6);
        let tr = simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
        assert_eq!(tr.samples.len(), cfg.n_samples());
        assert_eq!(tr.samples[0].t, -2e-6);
        for w in tr.samples.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(((w[1].t - w[0].t) - 1e-7).abs() < 1e-7 * 1e-6);
        }
    }

    #[test]
    fn harmonic_solution_over_ten_periods() {
        let p = OscillatorParams::new(4.08e5, 0.0, 4.8e-19, 0.0, 0.0).unwrap();
        let a = 1e-6;
        let period = 2.0 * PI / p.omega0();
        let init = InitCondition::Fixed { q: a, v: 0.0 };
        for (integ, wdt) in [(Integrator::Heun, 1e-3), (Integrator::EulerMaruyama, 1e-4)] {
            let dt = wdt / p.omega0();
            let cfg = SimConfig::new(10.0 * period, 0, 1)
                .with_steps(dt, 10.0 * dt)
                .with_integrator(integ)
                .with_init(init);
            let tr = simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
            let worst = tr
                .samples
                .iter()
                .map(|s| (s.q - a * (p.omega0() * s.t).cos()).abs() / a)
                .fold(0.0, f64::max);
            assert!(worst < 1e-4, "{integ:?}: {worst:e}");
        }
    }

    #[test]
    fn damped_envelope_decay() {
        let p = OscillatorParams::new(4.08e5, 619.0, 4.8e-19, 0.0, 0.0).unwrap();
        let a = 1e-6;
        let cfg = SimConfig::new(1e-3, 0, 1).with_init(InitCondition::Fixed { q: a, v: 0.0 });
        let tr = simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
        for s in tr.samples.iter().step_by(500) {
            let amp = (s.q * s.q + (s.v / p.omega0()).powi(2)).sqrt();
            let expected = a * (-p.gamma0() * s.t / 2.0).exp();
            assert_rel(amp, expected, 0.01);
        }
    }

    #[test]
    fn energy_conservation_without_bath() {
        let p = OscillatorParams::new(4.08e5, 0.0, 4.8e-19, 0.0, xi_from_um2(-0.1)).unwrap();
        let period = 2.0 * PI / p.omega0();
        let init = InitCondition::Fixed { q: 0.5e-6, v: 0.0 };
        let e0 = p.energy(&State::new(0.5e-6, 0.0, 0.0));
        for (integ, wdt, tol) in [
            (Integrator::Heun, 1e-3, 1e-3),
            (Integrator::EulerMaruyama, 1e-3, 1e-2),
        ] {
            let dt = wdt / p.omega0();
            let cfg = SimConfig::new(10.0 * period, 0, 1)
                .with_steps(dt, 5.0 * dt)
                .with_integrator(integ)
                .with_init(init);
            let tr = simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
            let worst = tr
                .samples
                .iter()
                .map(|s| ((p.energy(s) - e0) / e0).abs())
                .fold(0.0, f64::max);
            assert!(worst < tol, "{integ:?}: {worst:e}");
        }
    }

    #[test]
    fn escape_is_flagged_not_fatal() {
        let p = OscillatorParams::new(4.08e5, 0.0, 4.8e-19, 0.0, xi_from_um2(-1.0)).unwrap();
        // Starting just past the barrier at 1 um.
        let cfg = SimConfig::new(2e-5, 0, 1).with_init(InitCondition::Fixed { q: 0.9e-6, v: 1.0 });
        let tr = simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
        assert!(tr.escaped());
        assert!(tr.samples.iter().all(|s| s.q.abs() <= 1e-6));
    }

    #[test]
    fn single_member_ensemble_equals_trajectory() {
        let p = OscillatorParams::reference_trap()
            .with_xi_um2(-0.1)
            .unwrap();
        let pulse = crate::pulse::make_squeeze_pulse(&p, 0.784, 0.0).unwrap();
        let cfg = SimConfig::new(1e-5, 5, 1);
        let ens = simulate_ensemble(&p, &pulse, &cfg).unwrap();
        assert_eq!(ens.len(), 1);
        assert_eq!(
            ens.trajectories[0],
            simulate_trajectory(&p, &pulse, &cfg, 0).unwrap()
        );
    }

    #[test]
    fn ensemble_independent_of_thread_count() {
        let p = OscillatorParams::reference_trap()
            .with_xi_um2(-0.1)
            .unwrap();
        let pulse = crate::pulse::make_squeeze_pulse(&p, 0.784, 0.0).unwrap();
        let cfg = SimConfig::new(1e-5, 17, 40);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&p, &pulse, &cfg).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
        for (i, tr) in one.trajectories.iter().enumerate() {
            assert_eq!(tr.index, i as u64);
        }
    }
}
