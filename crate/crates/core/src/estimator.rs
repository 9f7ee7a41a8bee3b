//! The `xi` sweep: simulate a cloud for every candidate non-linearity,
//! compare it with the reference, smooth the p-value curve and fit a
//! Gaussian whose mean and width are the estimate and its spread.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phasespace::{
    check_header, compare_clouds, fmt_sig12, parse_row, snapshot_at, split_csv, PhaseCloud,
};
use crate::pulse::PulseSchedule;
use crate::sde::{simulate_ensemble, OscillatorParams, SimConfig};
use crate::stats::{gaussian_fit, savgol_smooth, GaussianFit, KsResult, PValueMethod};
use crate::units::{to_us, um};

/// Escape fraction above which a grid point is flagged.
pub const ESCAPE_WARN_FRACTION: f64 = 0.05;
pub const MIN_GRID_POINTS: usize = 5;
pub const MIN_SWEEP_TRAJECTORIES: usize = 50;
/// Coverage threshold: a grid whose best p-value stays below this contains
/// no compatible candidate.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every grid point reuses the base seed (common random numbers).
    FixedPerXi,
    /// Each grid point gets its own seed derived from the base seed.
    #[default]
    DistinctPerXi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Candidate non-linearities in μm⁻², strictly increasing.
    pub xi_grid_um2: Vec<f64>,
    pub n_trajectories: usize,
    /// Delay after the end of the pulse, in seconds.
    pub t_snap: f64,
    /// Integration settings; `t_end` and `n_trajectories` are overridden.
    pub base: SimConfig,
    pub seed_policy: SeedPolicy,
    pub pvalue: PValueMethod,
}

impl SweepConfig {
    pub fn new(xi_grid_um2: Vec<f64>, n_trajectories: usize, t_snap: f64, base: SimConfig) -> Self {
        Self {
            xi_grid_um2,
            n_trajectories,
            t_snap,
            base,
            seed_policy: SeedPolicy::default(),
            pvalue: PValueMethod::default(),
        }
    }

    pub fn with_seed_policy(mut self, policy: SeedPolicy) -> Self {
        self.seed_policy = policy;
        self
    }

    pub fn with_pvalue(mut self, method: PValueMethod) -> Self {
        self.pvalue = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi_grid_um2.len() < MIN_GRID_POINTS {
            return Err(invalid(
                "xi_grid",
                format!(
                    "needs at least {MIN_GRID_POINTS} points, got {}",
                    self.xi_grid_um2.len()
                ),
            ));
        }
        if self.xi_grid_um2.iter().any(|x| !x.is_finite())
            || self.xi_grid_um2.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(invalid("xi_grid", "must be finite and strictly increasing"));
        }
        if self.n_trajectories < MIN_SWEEP_TRAJECTORIES {
            return Err(invalid(
                "n_trajectories",
                format!(
                    "must be >= {MIN_SWEEP_TRAJECTORIES}, got {}",
                    self.n_trajectories
                ),
            ));
        }
        if !(self.t_snap.is_finite() && self.t_snap >= 0.0) {
            return Err(invalid("t_snap", "must be >= 0"));
        }
        if let PValueMethod::Permutation { permutations } = self.pvalue {
            if permutations == 0 {
                return Err(invalid("permutations", "must be >= 1"));
            }
        }
        Ok(())
    }

    /// Simulation settings for grid point `index`.
    pub fn sim_config(&self, index: usize, pulse: &PulseSchedule) -> SimConfig {
        let seed = match self.seed_policy {
            SeedPolicy::FixedPerXi => self.base.seed,
            SeedPolicy::DistinctPerXi => mix_seed(self.base.seed, index as u64 + 1),
        };
        self.base
            .with_seed(seed)
            .with_trajectories(self.n_trajectories)
            .with_t_end(pulse.t_end() + self.t_snap + self.base.sample_dt)
    }

    fn test_seed(&self, index: usize) -> u64 {
        mix_seed(self.base.seed ^ 0x5_EED0_F4B5, index as u64)
    }
}

/// SplitMix64 finaliser applied to `seed + k * golden`.
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub window: usize,
    pub order: usize,
    /// Fit the Gaussian to the raw p-values instead of the smoothed ones.
    pub fit_raw: bool,
}

impl Default for SmoothingParams {
    /// Window 31, cubic: the setting for a 300-point grid.
    fn default() -> Self {
        Self {
            window: 31,
            order: 3,
            fit_raw: false,
        }
    }
}

impl SmoothingParams {
    /// Keeps the window at about a tenth of the grid (odd, at least
    /// `order + 2`), so coarse grids are not flattened.
    pub fn for_grid(n_points: usize) -> Self {
        let d = Self::default();
        let mut window = (n_points as f64 / 10.0).round() as usize;
        if window.is_multiple_of(2) {
            window += 1;
        }
        let min = d.order + 2 + (d.order + 2 + 1) % 2;
        Self {
            window: window.max(min),
            ..d
        }
    }
}

/// Outcome at one grid point. Failed points (divergence, every trajectory
/// escaped) carry `p_value = 0` and the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub xi_um2: f64,
    pub p_value: f64,
    pub d_statistic: f64,
    pub escapes: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub xi_grid_um2: Vec<f64>,
    pub p_raw: Vec<f64>,
    pub p_smoothed: Vec<f64>,
    pub escapes: Vec<usize>,
    pub fit: Option<GaussianFit>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    /// Builds a result from raw p-values, smoothing and fitting with
    /// `smoothing` when the grid is long enough.
    pub fn from_raw(
        xi_grid_um2: Vec<f64>,
        p_raw: Vec<f64>,
        escapes: Vec<usize>,
        smoothing: &SmoothingParams,
    ) -> Result<Self> {
        if p_raw.len() != xi_grid_um2.len() || escapes.len() != xi_grid_um2.len() {
            return Err(invalid("p_raw", "arrays must match the grid length"));
        }
        if p_raw.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("p_raw", "p-values must lie in [0, 1]"));
        }
        let mut r = Self {
            xi_grid_um2,
            p_raw,
            p_smoothed: Vec::new(),
            escapes,
            fit: None,
            warnings: Vec::new(),
        };
        r.resmooth(smoothing);
        Ok(r)
    }

    /// Recomputes the smoothed curve and fit; a grid shorter than the window
    /// keeps the raw values.
    pub fn resmooth(&mut self, smoothing: &SmoothingParams) {
        self.p_smoothed = savgol_smooth(&self.p_raw, smoothing.window, smoothing.order)
            .unwrap_or_else(|_| self.p_raw.clone());
        let y = if smoothing.fit_raw {
            &self.p_raw
        } else {
            &self.p_smoothed
        };
        self.fit = gaussian_fit(&self.xi_grid_um2, y).ok();
    }

    pub fn len(&self) -> usize {
        self.xi_grid_um2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_grid_um2.is_empty()
    }

    /// Grid value at the maximum of the smoothed curve.
    pub fn smoothed_argmax(&self) -> f64 {
        let i = argmax(&self.p_smoothed);
        self.xi_grid_um2[i]
    }
}

fn argmax(y: &[f64]) -> usize {
    y.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn sweep_point(
    reference: &PhaseCloud,
    cfg: &SweepConfig,
    params: &OscillatorParams,
    pulse: &PulseSchedule,
    index: usize,
) -> Result<SweepPoint> {
    let xi_um2 = cfg.xi_grid_um2[index];
    let p = params.with_xi_um2(xi_um2)?;
    let sim = cfg.sim_config(index, pulse);
    let failed = |escapes: usize, e: Error| SweepPoint {
        xi_um2,
        p_value: 0.0,
        d_statistic: 1.0,
        escapes,
        failure: Some(e.to_string()),
    };
    let ensemble = match simulate_ensemble(&p, pulse, &sim) {
        Ok(e) => e,
        Err(e @ Error::Divergence { .. }) => return Ok(failed(0, e)),
        Err(e) => return Err(e),
    };
    let escapes = ensemble.escaped_count();
    let snap = match snapshot_at(&ensemble, cfg.t_snap) {
        Ok(s) => s,
        Err(e @ Error::AllEscaped) => return Ok(failed(escapes, e)),
        Err(e) => return Err(e),
    };
    let ks = compare_clouds(&snap.cloud, reference, cfg.pvalue, cfg.test_seed(index))?;
    Ok(SweepPoint {
        xi_um2,
        p_value: ks.p_value,
        d_statistic: ks.d_statistic,
        escapes,
        failure: None,
    })
}

/// Per-point outcomes of a sweep, evaluated in parallel and gathered by grid
/// index.
pub fn sweep_points(
    reference: &PhaseCloud,
    cfg: &SweepConfig,
    params: &OscillatorParams,
    pulse: &PulseSchedule,
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if !reference.is_usable() {
        return Err(Error::EmptySample("reference cloud"));
    }
    let reference = reference.normalize();
    (0..cfg.xi_grid_um2.len())
        .into_par_iter()
        .map(|i| sweep_point(&reference, cfg, params, pulse, i))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Runs the sweep against `reference`. The `xi` stored in `params` is
/// ignored. Smoothing uses [`SmoothingParams::for_grid`].
pub fn sweep_xi(
    reference: &PhaseCloud,
    cfg: &SweepConfig,
    params: &OscillatorParams,
    pulse: &PulseSchedule,
) -> Result<SweepResult> {
    let points = sweep_points(reference, cfg, params, pulse)?;
    let mut result = SweepResult::from_raw(
        cfg.xi_grid_um2.clone(),
        points.iter().map(|p| p.p_value).collect(),
        points.iter().map(|p| p.escapes).collect(),
        &SmoothingParams::for_grid(cfg.xi_grid_um2.len()),
    )?;
    for pt in &points {
        if let Some(f) = &pt.failure {
            result
                .warnings
                .push(format!("xi={} um^-2: {f}", fmt_sig12(pt.xi_um2)));
        }
        let frac = pt.escapes as f64 / cfg.n_trajectories as f64;
        if frac > ESCAPE_WARN_FRACTION {
            result.warnings.push(format!(
                "xi={} um^-2: {:.1}% of trajectories escaped",
                fmt_sig12(pt.xi_um2),
                100.0 * frac
            ));
        }
    }
    Ok(result)
}

pub const SWEEP_HEADER: &str = "xi_um2,p_raw,p_smoothed,escapes";

/// Serialises a sweep. The fit and any warnings are written as comment
/// metadata, followed by the caller's `extra` pairs.
pub fn sweep_to_csv(r: &SweepResult, extra: &[(String, String)]) -> String {
    let mut out = String::new();
    if let Some(f) = &r.fit {
        let _ = writeln!(out, "# fit_amplitude={}", fmt_sig12(f.amplitude));
        let _ = writeln!(out, "# fit_mean_um2={}", fmt_sig12(f.mean));
        let _ = writeln!(out, "# fit_sigma_um2={}", fmt_sig12(f.sigma));
        let _ = writeln!(out, "# fit_rms_residual={}", fmt_sig12(f.rms_residual));
        let _ = writeln!(out, "# fit_iterations={}", f.iterations);
    }
    for (i, w) in r.warnings.iter().enumerate() {
        let _ = writeln!(out, "# warning_{i}={w}");
    }
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for i in 0..r.len() {
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{}",
            r.xi_grid_um2[i], r.p_raw[i], r.p_smoothed[i], r.escapes[i]
        );
    }
    out
}

pub fn write_sweep(
    r: &SweepResult,
    path: impl AsRef<Path>,
    extra: &[(String, String)],
) -> Result<()> {
    std::fs::write(path, sweep_to_csv(r, extra))?;
    Ok(())
}

pub fn sweep_from_csv(text: &str) -> Result<SweepResult> {
    let doc = split_csv(text);
    let columns = ["xi_um2", "p_raw", "p_smoothed", "escapes"];
    check_header(&doc, &columns)?;
    let mut r = SweepResult {
        xi_grid_um2: Vec::new(),
        p_raw: Vec::new(),
        p_smoothed: Vec::new(),
        escapes: Vec::new(),
        fit: None,
        warnings: Vec::new(),
    };
    for &(lineno, line) in &doc.rows {
        let row = parse_row(lineno, line, &columns)?;
        if !(0.0..=1.0).contains(&row[1]) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("p_raw {} outside [0, 1]", row[1]),
            });
        }
        if !(row[3] >= 0.0 && row[3].fract() == 0.0) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("escapes `{}` is not a count", row[3]),
            });
        }
        r.xi_grid_um2.push(row[0]);
        r.p_raw.push(row[1]);
        r.p_smoothed.push(row[2]);
        r.escapes.push(row[3] as usize);
    }
    let num = |k: &str| -> Option<f64> { doc.meta.get(k).and_then(|(_, v)| v.parse().ok()) };
    if let (Some(amplitude), Some(mean), Some(sigma)) = (
        num("fit_amplitude"),
        num("fit_mean_um2"),
        num("fit_sigma_um2"),
    ) {
        r.fit = Some(GaussianFit {
            amplitude,
            mean,
            sigma,
            rms_residual: num("fit_rms_residual").unwrap_or(f64::NAN),
            iterations: num("fit_iterations").unwrap_or(0.0) as usize,
        });
    }
    r.warnings = doc
        .meta
        .iter()
        .filter(|(k, _)| k.starts_with("warning_"))
        .map(|(_, (_, v))| v.clone())
        .collect();
    Ok(r)
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<SweepResult> {
    sweep_from_csv(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub mean_um2: f64,
    pub sigma_um2: f64,
    /// Value of the fitted curve at its mean.
    pub p_at_peak: f64,
    pub argmax_um2: f64,
    /// `None` when the fit failed on a grid without coverage.
    pub fit: Option<GaussianFit>,
    pub warnings: Vec<String>,
}

impl XiEstimate {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mean_um2 = {}", fmt_sig12(self.mean_um2));
        let _ = writeln!(out, "sigma_um2 = {}", fmt_sig12(self.sigma_um2));
        let _ = writeln!(out, "p_at_peak = {}", fmt_sig12(self.p_at_peak));
        let _ = writeln!(out, "argmax_um2 = {}", fmt_sig12(self.argmax_um2));
        if let Some(f) = &self.fit {
            let _ = writeln!(out, "fit_rms_residual = {}", fmt_sig12(f.rms_residual));
            let _ = writeln!(out, "fit_iterations = {}", f.iterations);
        }
        let _ = writeln!(out, "warnings = {}", self.warnings.len());
        for w in &self.warnings {
            let _ = writeln!(out, "warning = {w}");
        }
        out
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("plain data serialises")
    }
}

/// Smooths the raw curve, fits a Gaussian and reports its mean and width.
///
/// When no grid point reaches [`SIGNIFICANCE`] the grid does not cover the
/// data; the estimate then falls back to the smoothed argmax if the fit
/// fails, and always carries a coverage warning.
pub fn estimate_xi(s: &SweepResult, smoothing: &SmoothingParams) -> Result<XiEstimate> {
    if s.len() < smoothing.window {
        return Err(invalid(
            "window",
            format!(
                "sweep has {} points, fewer than the window {}",
                s.len(),
                smoothing.window
            ),
        ));
    }
    let smoothed = savgol_smooth(&s.p_raw, smoothing.window, smoothing.order)?;
    let y = if smoothing.fit_raw {
        &s.p_raw
    } else {
        &smoothed
    };
    let (lo, hi) = (s.xi_grid_um2[0], s.xi_grid_um2[s.len() - 1]);
    let span = hi - lo;
    let i_max = argmax(&smoothed);
    let argmax_um2 = s.xi_grid_um2[i_max];
    let best_raw = s.p_raw.iter().copied().fold(0.0, f64::max);

    let mut warnings = Vec::new();
    let covered = best_raw >= SIGNIFICANCE;
    if !covered {
        warnings.push(format!(
            "coverage: every p-value is below {SIGNIFICANCE} (best {}); the grid [{}, {}] likely excludes the true xi",
            fmt_sig12(best_raw),
            fmt_sig12(lo),
            fmt_sig12(hi)
        ));
    }
    let fit = match gaussian_fit(&s.xi_grid_um2, y) {
        Ok(f) => Some(f),
        Err(e) if !covered => {
            warnings.push(format!("fit failed: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let (mut mean, sigma, p_at_peak) = match &fit {
        Some(f) => (f.mean, f.sigma, f.amplitude),
        None => (argmax_um2, span, smoothed[i_max]),
    };
    if mean < lo || mean > hi {
        warnings.push(format!(
            "coverage: fitted mean {} lies outside the grid; clamped",
            fmt_sig12(mean)
        ));
        mean = mean.clamp(lo, hi);
    }
    if i_max == 0 || i_max == s.len() - 1 {
        warnings.push("coverage: smoothed maximum sits on the grid edge".into());
    }
    if fit.is_some() && (mean - 2.0 * sigma < lo || mean + 2.0 * sigma > hi) {
        warnings.push("coverage: grid does not span mean +/- 2 sigma".into());
    }
    Ok(XiEstimate {
        mean_um2: mean,
        sigma_um2: sigma,
        p_at_peak,
        argmax_um2,
        fit,
        warnings,
    })
}

/// Compares one simulation at `xi_um2` against reference clouds at each
/// requested delay. The ensemble is simulated once and reused; `cfg.t_end`
/// is extended to cover the latest delay.
#[allow(clippy::too_many_arguments)]
pub fn pvalue_over_time(
    references: &[PhaseCloud],
    times: &[f64],
    xi_um2: f64,
    params: &OscillatorParams,
    pulse: &PulseSchedule,
    cfg: &SimConfig,
    method: PValueMethod,
) -> Result<Vec<(f64, KsResult)>> {
    let find = |t: f64| -> Result<&PhaseCloud> {
        references
            .iter()
            .find(|c| (c.t_snap - t).abs() <= 1e-9 * t.abs().max(1e-6))
            .ok_or(Error::MissingReference { t_us: to_us(t) })
    };
    let refs = times.iter().map(|&t| find(t)).collect::<Result<Vec<_>>>()?;
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let cfg = cfg.with_t_end(cfg.t_end.max(pulse.t_end() + t_max + cfg.sample_dt));
    let ensemble = simulate_ensemble(&params.with_xi_um2(xi_um2)?, pulse, &cfg)?;
    times
        .par_iter()
        .zip(refs.par_iter())
        .enumerate()
        .map(|(i, (&t, reference))| {
            let snap = snapshot_at(&ensemble, t)?;
            let ks = compare_clouds(&snap.cloud, reference, method, mix_seed(cfg.seed, i as u64))?;
            Ok((t, ks))
        })
        .collect()
}

pub const PVALUE_TIME_HEADER: &str = "t_us,p_value,d_statistic,n_eff";

pub fn pvalue_time_to_csv(series: &[(f64, KsResult)], extra: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(PVALUE_TIME_HEADER);
    out.push('\n');
    for (t, ks) in series {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e}",
            fmt_sig12(to_us(*t)),
            ks.p_value,
            ks.d_statistic,
            ks.n_eff
        );
    }
    out
}

/// Reads `(t_us, p_value)` pairs back from a p-value-vs-time CSV.
pub fn pvalue_time_from_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let doc = split_csv(text);
    let columns = ["t_us", "p_value", "d_statistic", "n_eff"];
    check_header(&doc, &columns)?;
    doc.rows
        .iter()
        .map(|&(lineno, line)| parse_row(lineno, line, &columns).map(|r| (r[0], r[1])))
        .collect()
}

/// Non-linearity in μm⁻² at which the cubic force equals the linear one at
/// displacement `q_m`: `1 / q²`.
pub fn critical_xi(q_m: f64) -> Result<f64> {
    if !(q_m.is_finite() && q_m > 0.0) {
        return Err(invalid("q", format!("must be > 0, got {q_m}")));
    }
    let q_um = q_m / um(1.0);
    Ok(1.0 / (q_um * q_um))
}
