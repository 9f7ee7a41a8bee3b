//! TOML run configuration. Every key carries its unit in its name; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use squeezefit::estimator::{linspace, SeedPolicy, SmoothingParams, SweepConfig};
use squeezefit::pulse::make_squeeze_pulse;
use squeezefit::{
    Integrator, MeasurementChain, OscillatorParams, PValueMethod, PulseSchedule, SimConfig,
};

use crate::failure::Failure;
use crate::parse::parse_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub oscillator: OscillatorSection,
    pub pulse: PulseSection,
    pub sim: SimSection,
    pub sweep: SweepSection,
    pub chain: ChainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscillatorSection {
    pub omega0_khz: f64,
    pub gamma0_per_s: f64,
    pub mass_kg: f64,
    pub temperature_k: f64,
    /// Non-linearity used by `synth` and `simulate`.
    pub xi_um2: f64,
    /// Recorded in output headers only; the damping rate is set directly.
    pub pressure_mbar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseSection {
    pub power_drop: f64,
    pub start_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt_ns: f64,
    pub sample_dt_us: f64,
    pub integrator: Integrator,
    pub t_pre_us: f64,
    pub escape_radius_um: Option<f64>,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `lo:hi:n` in μm⁻².
    pub grid_um2: String,
    pub trajectories: usize,
    pub t_snap_us: f64,
    pub seed_policy: SeedPolicy,
    /// Zero selects the asymptotic p-value.
    pub permutations: usize,
    pub smoothing_window: Option<usize>,
    pub smoothing_order: usize,
    pub fit_raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub enabled: bool,
    /// Defaults to the trap frequency.
    pub center_khz: Option<f64>,
    pub halfwidth_khz: f64,
    pub order: usize,
    pub sample_rate_mhz: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 1,
            oscillator: OscillatorSection::default(),
            pulse: PulseSection::default(),
            sim: SimSection::default(),
            sweep: SweepSection::default(),
            chain: ChainSection::default(),
        }
    }
}

impl Default for OscillatorSection {
    fn default() -> Self {
        Self {
            omega0_khz: 64.9,
            gamma0_per_s: 619.0,
            mass_kg: 4.8e-19,
            temperature_k: 300.0,
            xi_um2: -0.1,
            pressure_mbar: None,
        }
    }
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            power_drop: 0.784,
            start_us: 0.0,
        }
    }
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt_ns: 5.0,
            sample_dt_us: 0.1,
            integrator: Integrator::EulerMaruyama,
            t_pre_us: 0.0,
            escape_radius_um: None,
            trajectories: 500,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid_um2: "-0.35:0.15:300".into(),
            trajectories: 400,
            t_snap_us: 77.5,
            seed_policy: SeedPolicy::DistinctPerXi,
            permutations: 199,
            smoothing_window: None,
            smoothing_order: 3,
            fit_raw: false,
        }
    }
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            enabled: false,
            center_khz: None,
            halfwidth_khz: 30.0,
            order: 4,
            sample_rate_mhz: 10.0,
        }
    }
}

impl RunConfig {
    /// Parses and fully validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Failure::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let params = self.params()?;
        self.pulse_schedule(&params)?;
        self.sim_config(self.sim.trajectories, 1e-4)
            .validate(&params)
            .map_err(Failure::config_from)?;
        self.sweep_config(None)?
            .validate()
            .map_err(Failure::config_from)?;
        if self.chain.enabled {
            self.chain(&params)?;
        }
        if let Some(p) = self.oscillator.pressure_mbar {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Failure::config("oscillator.pressure_mbar must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<OscillatorParams, Failure> {
        let o = &self.oscillator;
        OscillatorParams::new(
            2.0 * std::f64::consts::PI * o.omega0_khz * 1e3,
            o.gamma0_per_s,
            o.mass_kg,
            o.temperature_k,
            0.0,
        )
        .and_then(|p| p.with_xi_um2(o.xi_um2))
        .map_err(Failure::config_from)
    }

    pub fn pulse_schedule(&self, params: &OscillatorParams) -> Result<PulseSchedule, Failure> {
        make_squeeze_pulse(params, self.pulse.power_drop, self.pulse.start_us * 1e-6)
            .map_err(Failure::config_from)
    }

    /// Simulation settings ending at `t_end` seconds.
    pub fn sim_config(&self, trajectories: usize, t_end: f64) -> SimConfig {
        SimConfig::new(t_end, self.seed, trajectories)
            .with_steps(self.sim.dt_ns * 1e-9, self.sim.sample_dt_us * 1e-6)
            .with_integrator(self.sim.integrator)
            .with_t_pre(self.sim.t_pre_us * 1e-6)
            .with_escape_radius(self.sim.escape_radius_um.map(|r| r * 1e-6))
    }

    pub fn pvalue_method(&self) -> PValueMethod {
        match self.sweep.permutations {
            0 => PValueMethod::Asymptotic,
            n => PValueMethod::Permutation { permutations: n },
        }
    }

    /// Sweep settings; `grid` overrides the configured grid string.
    pub fn sweep_config(&self, grid: Option<&str>) -> Result<SweepConfig, Failure> {
        let (lo, hi, n) = parse_grid(grid.unwrap_or(&self.sweep.grid_um2))?;
        Ok(SweepConfig::new(
            linspace(lo, hi, n),
            self.sweep.trajectories,
            self.sweep.t_snap_us * 1e-6,
            self.sim_config(1, 0.0),
        )
        .with_seed_policy(self.sweep.seed_policy)
        .with_pvalue(self.pvalue_method()))
    }

    pub fn smoothing(&self, grid_points: usize) -> SmoothingParams {
        let base = SmoothingParams::for_grid(grid_points);
        SmoothingParams {
            window: self.sweep.smoothing_window.unwrap_or(base.window),
            order: self.sweep.smoothing_order,
            fit_raw: self.sweep.fit_raw,
        }
    }

    pub fn chain(&self, params: &OscillatorParams) -> Result<MeasurementChain, Failure> {
        let c = &self.chain;
        let chain = MeasurementChain {
            band_center: c
                .center_khz
                .map(|f| f * 1e3)
                .unwrap_or(params.omega0() / (2.0 * std::f64::consts::PI)),
            band_halfwidth: c.halfwidth_khz * 1e3,
            order: c.order,
            sample_rate: c.sample_rate_mhz * 1e6,
        };
        chain.validate().map_err(Failure::config_from)?;
        Ok(chain)
    }

    /// Configuration as one JSON line for output headers.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serialises")
    }
}
