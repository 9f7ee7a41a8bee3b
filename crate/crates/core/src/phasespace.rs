//! Phase-space point clouds: snapshots of ensembles at a fixed delay after
//! the pulse, the band-pass measurement chain that turns a trajectory into
//! "experimental" data, and the CSV formats for clouds and ensembles.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::SosFilter;
use crate::pulse::PulseSchedule;
use crate::sde::{simulate_ensemble, Ensemble, OscillatorParams, SimConfig, Trajectory};
use crate::stats::{ks_1d, ks_2d_with, KsResult, PValueMethod};
use crate::units::{to_us, us};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudSource {
    Simulated,
    SyntheticExperiment,
    Imported,
}

impl fmt::Display for CloudSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudSource::Simulated => "simulated",
            CloudSource::SyntheticExperiment => "synthetic_experiment",
            CloudSource::Imported => "imported",
        })
    }
}

impl FromStr for CloudSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulated" => Ok(CloudSource::Simulated),
            "synthetic_experiment" => Ok(CloudSource::SyntheticExperiment),
            "imported" => Ok(CloudSource::Imported),
            other => Err(format!("unknown source tag `{other}`")),
        }
    }
}

/// Coordinates of the stored points: `(q, v)` in SI, or `(q, v / omega_ref)`
/// with both axes in metres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Physical,
    Normalized,
}

/// Points in phase space taken `t_snap` seconds after the pulse ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCloud {
    pub t_snap: f64,
    pub points: Vec<[f64; 2]>,
    pub source: CloudSource,
    pub omega_ref: f64,
    pub frame: Frame,
}

impl PhaseCloud {
    pub fn new(
        t_snap: f64,
        points: Vec<[f64; 2]>,
        source: CloudSource,
        omega_ref: f64,
    ) -> Result<Self> {
        let cloud = Self {
            t_snap,
            points,
            source,
            omega_ref,
            frame: Frame::Physical,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_snap.is_finite() && self.t_snap >= 0.0) {
            return Err(invalid(
                "t_snap",
                format!("must be >= 0, got {}", self.t_snap),
            ));
        }
        if !(self.omega_ref.is_finite() && self.omega_ref > 0.0) {
            return Err(invalid("omega_ref", "must be > 0"));
        }
        if self
            .points
            .iter()
            .any(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(invalid("points", "all points must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether the cloud can enter a KS comparison.
    pub fn is_usable(&self) -> bool {
        !self.points.is_empty()
    }

    pub fn normalize(&self) -> PhaseCloud {
        match self.frame {
            Frame::Normalized => self.clone(),
            Frame::Physical => PhaseCloud {
                points: self
                    .points
                    .iter()
                    .map(|p| [p[0], p[1] / self.omega_ref])
                    .collect(),
                frame: Frame::Normalized,
                ..self.clone()
            },
        }
    }

    pub fn denormalize(&self) -> PhaseCloud {
        match self.frame {
            Frame::Physical => self.clone(),
            Frame::Normalized => PhaseCloud {
                points: self
                    .points
                    .iter()
                    .map(|p| [p[0], p[1] * self.omega_ref])
                    .collect(),
                frame: Frame::Physical,
                ..self.clone()
            },
        }
    }
}

/// A cloud together with the number of escaped trajectories left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub cloud: PhaseCloud,
    pub escaped: usize,
}

/// Linear interpolation of a uniformly sampled series at absolute time `t`.
fn interpolate<T: Copy>(
    t: f64,
    t_start: f64,
    step: f64,
    len: usize,
    at: impl Fn(usize) -> T,
    lerp: impl Fn(T, T, f64) -> T,
) -> Result<T> {
    let t_last = t_start + (len.saturating_sub(1)) as f64 * step;
    let slack = 1e-9 * step;
    if len == 0 || t < t_start - slack || t > t_last + slack {
        return Err(Error::TimeOutOfRange {
            t,
            start: t_start,
            end: t_last,
        });
    }
    let x = ((t - t_start) / step).max(0.0);
    let i = x.floor() as usize;
    let frac = x - i as f64;
    if i + 1 >= len || frac < 1e-9 {
        return Ok(at(i.min(len - 1)));
    }
    if frac > 1.0 - 1e-9 {
        return Ok(at(i + 1));
    }
    Ok(lerp(at(i), at(i + 1), frac))
}

fn state_at(tr: &Trajectory, t: f64) -> Result<[f64; 2]> {
    interpolate(
        t,
        tr.t_start,
        tr.sample_dt,
        tr.samples.len(),
        |i| [tr.samples[i].q, tr.samples[i].v],
        |a, b, f| [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])],
    )
}

/// One point per trajectory that stayed in the trap, `t_snap` after the
/// pulse ended.
pub fn snapshot_at(e: &Ensemble, t_snap: f64) -> Result<Snapshot> {
    let t = e.pulse.t_end() + t_snap;
    let mut points = Vec::with_capacity(e.len());
    let mut escaped = 0;
    for tr in &e.trajectories {
        if tr.escaped() {
            escaped += 1;
            continue;
        }
        points.push(state_at(tr, t)?);
    }
    if points.is_empty() && escaped > 0 {
        return Err(Error::AllEscaped);
    }
    Ok(Snapshot {
        cloud: PhaseCloud::new(t_snap, points, CloudSource::Simulated, e.params.omega0())?,
        escaped,
    })
}

/// 2D KS comparison of two clouds in normalised coordinates.
pub fn compare_clouds(
    a: &PhaseCloud,
    b: &PhaseCloud,
    method: PValueMethod,
    seed: u64,
) -> Result<KsResult> {
    let (a, b) = (a.normalize(), b.normalize());
    ks_2d_with(&a.points, &b.points, method, seed)
}

/// 1D KS tests on the position and normalised-velocity marginals.
pub fn marginal_ks(a: &PhaseCloud, b: &PhaseCloud) -> Result<(KsResult, KsResult)> {
    let (a, b) = (a.normalize(), b.normalize());
    let col = |c: &PhaseCloud, k: usize| c.points.iter().map(|p| p[k]).collect::<Vec<_>>();
    Ok((
        ks_1d(&col(&a, 0), &col(&b, 0))?,
        ks_1d(&col(&a, 1), &col(&b, 1))?,
    ))
}

/// Detection model: a causal Butterworth band-pass on the position record,
/// followed by central-difference velocity estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementChain {
    pub band_center: f64,
    pub band_halfwidth: f64,
    pub order: usize,
    pub sample_rate: f64,
}

impl MeasurementChain {
    /// Centre on the trap frequency, ±30 kHz, order 4, 10 MHz sampling.
    pub fn for_params(p: &OscillatorParams) -> Self {
        Self {
            band_center: p.omega0() / (2.0 * std::f64::consts::PI),
            band_halfwidth: 30e3,
            order: 4,
            sample_rate: 10e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.band_halfwidth > 0.0 && self.band_halfwidth < self.band_center) {
            return Err(invalid(
                "band_halfwidth",
                "must satisfy 0 < band_halfwidth < band_center",
            ));
        }
        if !(self.sample_rate > 4.0 * self.band_center) {
            return Err(invalid("sample_rate", "must exceed 4 * band_center"));
        }
        if self.order == 0 {
            return Err(invalid("order", "must be >= 1"));
        }
        Ok(())
    }

    pub fn filter(&self) -> Result<SosFilter> {
        self.validate()?;
        SosFilter::butterworth_bandpass(
            self.order,
            self.band_center,
            self.band_halfwidth,
            self.sample_rate,
        )
    }
}

/// Measured position and velocity on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredSeries {
    pub t_start: f64,
    pub dt: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl MeasuredSeries {
    pub fn at(&self, t: f64) -> Result<[f64; 2]> {
        interpolate(
            t,
            self.t_start,
            self.dt,
            self.q.len(),
            |i| [self.q[i], self.v[i]],
            |a, b, f| [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])],
        )
    }
}

/// Central differences in the interior, one-sided at the ends.
fn differentiate(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (x[1] - x[0]) / dt
            } else if i == n - 1 {
                (x[n - 1] - x[n - 2]) / dt
            } else {
                (x[i + 1] - x[i - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

fn decimation(tr_dt: f64, chain: &MeasurementChain) -> Result<usize> {
    let ratio = 1.0 / (tr_dt * chain.sample_rate);
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-6 * ratio {
        return Err(invalid(
            "sample_rate",
            format!(
                "trajectory rate {} Hz must be an integer multiple of the chain rate {} Hz",
                1.0 / tr_dt,
                chain.sample_rate
            ),
        ));
    }
    Ok(factor as usize)
}

/// Passes a trajectory through the measurement chain. The filter starts from
/// rest at the first sample, so the start of the record carries its
/// transient.
pub fn synth_measurement(tr: &Trajectory, chain: &MeasurementChain) -> Result<MeasuredSeries> {
    let filter = chain.filter()?;
    let factor = decimation(tr.sample_dt, chain)?;
    let raw: Vec<f64> = tr.samples.iter().step_by(factor).map(|s| s.q).collect();
    let dt = tr.sample_dt * factor as f64;
    let q = filter.apply(&raw);
    let v = differentiate(&q, dt);
    Ok(MeasuredSeries {
        t_start: tr.t_start,
        dt,
        q,
        v,
    })
}

/// Simulates an ensemble at the true parameters and returns one cloud per
/// requested delay, tagged as synthetic experimental data. With a chain the
/// points come from the measured series instead of the true states.
pub fn synth_experiment(
    p_true: &OscillatorParams,
    pulse: &PulseSchedule,
    cfg: &SimConfig,
    chain: Option<&MeasurementChain>,
    t_snaps: &[f64],
) -> Result<Vec<Snapshot>> {
    let ensemble = simulate_ensemble(p_true, pulse, cfg)?;
    clouds_from_ensemble(&ensemble, chain, t_snaps, CloudSource::SyntheticExperiment)
}

/// Snapshot clouds at several delays from an existing ensemble, optionally
/// through a measurement chain.
pub fn clouds_from_ensemble(
    ensemble: &Ensemble,
    chain: Option<&MeasurementChain>,
    t_snaps: &[f64],
    source: CloudSource,
) -> Result<Vec<Snapshot>> {
    let Some(chain) = chain else {
        return t_snaps
            .iter()
            .map(|&t| {
                snapshot_at(ensemble, t).map(|mut s| {
                    s.cloud.source = source;
                    s
                })
            })
            .collect();
    };
    let kept: Vec<&Trajectory> = ensemble
        .trajectories
        .iter()
        .filter(|t| !t.escaped())
        .collect();
    let escaped = ensemble.len() - kept.len();
    if kept.is_empty() && escaped > 0 {
        return Err(Error::AllEscaped);
    }
    let measured = kept
        .iter()
        .map(|tr| synth_measurement(tr, chain))
        .collect::<Result<Vec<_>>>()?;
    t_snaps
        .iter()
        .map(|&t_snap| {
            let t = ensemble.pulse.t_end() + t_snap;
            let points = measured
                .iter()
                .map(|m| m.at(t))
                .collect::<Result<Vec<_>>>()?;
            Ok(Snapshot {
                cloud: PhaseCloud::new(t_snap, points, source, ensemble.params.omega0())?,
                escaped,
            })
        })
        .collect()
}

/// Shortest decimal form of `x` rounded to 12 significant digits.
pub(crate) fn fmt_sig12(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded}")
}

pub const CLOUD_HEADER: &str = "q_m,v_m_per_s";

/// Serialises a cloud. Extra `(key, value)` pairs become additional comment
/// metadata lines after the required ones.
pub fn cloud_to_csv(c: &PhaseCloud, extra: &[(String, String)]) -> String {
    let physical = c.denormalize();
    let mut out = String::new();
    let _ = writeln!(out, "# t_snap_us={}", fmt_sig12(to_us(c.t_snap)));
    let _ = writeln!(out, "# source={}", c.source);
    let _ = writeln!(out, "# omega_ref_rad_s={}", fmt_sig12(c.omega_ref));
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(CLOUD_HEADER);
    out.push('\n');
    for p in &physical.points {
        let _ = writeln!(out, "{:e},{:e}", p[0], p[1]);
    }
    out
}

pub fn write_cloud(c: &PhaseCloud, path: impl AsRef<Path>) -> Result<()> {
    write_cloud_with(c, path, &[])
}

pub fn write_cloud_with(
    c: &PhaseCloud,
    path: impl AsRef<Path>,
    extra: &[(String, String)],
) -> Result<()> {
    std::fs::write(path, cloud_to_csv(c, extra))?;
    Ok(())
}

/// Comment metadata (`# key=value`) and data lines of a CSV file, with
/// 1-based line numbers.
pub(crate) struct CsvDoc<'a> {
    pub meta: BTreeMap<String, (usize, String)>,
    pub header: Option<(usize, &'a str)>,
    pub rows: Vec<(usize, &'a str)>,
}

pub(crate) fn split_csv(text: &str) -> CsvDoc<'_> {
    let mut doc = CsvDoc {
        meta: BTreeMap::new(),
        header: None,
        rows: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                doc.meta
                    .insert(k.trim().to_string(), (lineno, v.trim().to_string()));
            }
            continue;
        }
        if doc.header.is_none() {
            doc.header = Some((lineno, line));
        } else {
            doc.rows.push((lineno, line));
        }
    }
    doc
}

pub(crate) fn check_header(doc: &CsvDoc<'_>, expected: &[&str]) -> Result<usize> {
    let Some((lineno, header)) = doc.header else {
        return Err(Error::Parse {
            line: 0,
            message: format!("missing header `{}`", expected.join(",")),
        });
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    for want in expected {
        if !cols.contains(want) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("missing column `{want}`"),
            });
        }
    }
    if cols.len() != expected.len() || cols.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected header `{}`, found `{header}`", expected.join(",")),
        });
    }
    Ok(lineno)
}

pub(crate) fn parse_row(lineno: usize, line: &str, columns: &[&str]) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < columns.len() {
        return Err(Error::Parse {
            line: lineno,
            message: format!("missing column `{}`", columns[fields.len()]),
        });
    }
    if fields.len() > columns.len() {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {} fields, found {}", columns.len(), fields.len()),
        });
    }
    fields
        .iter()
        .zip(columns)
        .map(|(f, col)| {
            f.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("column `{col}`: `{f}` is not a number"),
            })
        })
        .collect()
}

pub(crate) fn meta_value<T: FromStr>(doc: &CsvDoc<'_>, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let (line, raw) = doc.meta.get(key).ok_or_else(|| Error::Parse {
        line: 0,
        message: format!("missing metadata `# {key}=`"),
    })?;
    raw.parse::<T>().map_err(|e| Error::Parse {
        line: *line,
        message: format!("metadata `{key}`: {e}"),
    })
}

pub fn cloud_from_csv(text: &str) -> Result<PhaseCloud> {
    let doc = split_csv(text);
    let t_snap_us: f64 = meta_value(&doc, "t_snap_us")?;
    let source: CloudSource = meta_value(&doc, "source")?;
    let omega_ref: f64 = meta_value(&doc, "omega_ref_rad_s")?;
    let columns = ["q_m", "v_m_per_s"];
    check_header(&doc, &columns)?;
    let points = doc
        .rows
        .iter()
        .map(|&(lineno, line)| {
            let r = parse_row(lineno, line, &columns)?;
            if !(r[0].is_finite() && r[1].is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: "non-finite point".into(),
                });
            }
            Ok([r[0], r[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    PhaseCloud::new(us(t_snap_us), points, source, omega_ref)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PhaseCloud> {
    cloud_from_csv(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct EnsembleMeta {
    params: OscillatorParams,
    pulse: PulseSchedule,
    config: SimConfig,
    escaped: Vec<(u64, f64)>,
}

pub const ENSEMBLE_HEADER: &str = "index,t_s,q_m,v_m_per_s";

/// Long-format CSV of every sample of every trajectory. The parameters,
/// pulse, configuration and escapes travel in a JSON comment line so the
/// ensemble can be reloaded for later snapshots.
pub fn ensemble_to_csv(e: &Ensemble, extra: &[(String, String)]) -> String {
    let meta = EnsembleMeta {
        params: e.params,
        pulse: e.pulse,
        config: e.config,
        escaped: e
            .trajectories
            .iter()
            .filter_map(|t| t.escaped_at.map(|at| (t.index, at)))
            .collect(),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# ensemble={}",
        serde_json::to_string(&meta).expect("plain data serialises")
    );
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(ENSEMBLE_HEADER);
    out.push('\n');
    for tr in &e.trajectories {
        for s in &tr.samples {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", tr.index, s.t, s.q, s.v);
        }
    }
    out
}

pub fn ensemble_from_csv(text: &str) -> Result<Ensemble> {
    let doc = split_csv(text);
    let (line, raw) = doc.meta.get("ensemble").ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing metadata `# ensemble=`".into(),
    })?;
    let meta: EnsembleMeta = serde_json::from_str(raw).map_err(|e| Error::Parse {
        line: *line,
        message: format!("ensemble metadata: {e}"),
    })?;
    let columns = ["index", "t_s", "q_m", "v_m_per_s"];
    check_header(&doc, &columns)?;
    let escaped: BTreeMap<u64, f64> = meta.escaped.into_iter().collect();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for &(lineno, line) in &doc.rows {
        let r = parse_row(lineno, line, &columns)?;
        let index = r[0] as u64;
        if trajectories.last().map(|t| t.index) != Some(index) {
            if index != trajectories.len() as u64 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("trajectory index {index} out of order"),
                });
            }
            trajectories.push(Trajectory {
                params: meta.params,
                index,
                t_start: meta.config.t_start(),
                sample_dt: meta.config.sample_dt,
                samples: Vec::new(),
                escaped_at: escaped.get(&index).copied(),
            });
        }
        let tr = trajectories.last_mut().expect("pushed above");
        tr.samples.push(crate::sde::State::new(r[2], r[3], r[1]));
    }
    Ok(Ensemble {
        params: meta.params,
        pulse: meta.pulse,
        config: meta.config,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{InitCondition, State};

    fn cloud() -> PhaseCloud {
        PhaseCloud::new(
            7.75e-5,
            vec![[1e-7, -0.03], [-2.5e-7, 0.041], [0.0, 0.0]],
            CloudSource::Simulated,
            4.08e5,
        )
        .unwrap()
    }

    fn linear_ensemble() -> Ensemble {
        let params = OscillatorParams::reference_trap();
        let pulse = PulseSchedule::new(-0.784, 0.0, 1e-6).unwrap();
        let cfg = SimConfig::new(5e-6, 0, 3);
        let trajectories = (0..3)
            .map(|k| Trajectory {
                params,
                index: k,
                t_start: 0.0,
                sample_dt: 1e-7,
                samples: (0..=50)
                    .map(|i| {
                        let t = i as f64 * 1e-7;
                        State::new(k as f64 * 1e-7 + 0.02 * t, 0.02 + k as f64, t)
                    })
                    .collect(),
                escaped_at: (k == 2).then_some(5.1e-6),
            })
            .collect();
        Ensemble {
            params,
            pulse,
            config: cfg,
            trajectories,
        }
    }

    #[test]
    fn snapshot_on_grid_returns_samples() {
        let e = linear_ensemble();
        let snap = snapshot_at(&e, 2e-6).unwrap();
        assert_eq!(snap.escaped, 1);
        assert_eq!(snap.cloud.len(), 2);
        let s = e.trajectories[1].samples[30];
        assert_eq!(snap.cloud.points[1], [s.q, s.v]);
    }

    #[test]
    fn snapshot_midpoint_is_exact_on_linear_data() {
        let e = linear_ensemble();
        let snap = snapshot_at(&e, 2.05e-6).unwrap();
        let t = 3.05e-6;
        let expected = 1e-7 + 0.02 * t;
        assert!((snap.cloud.points[1][0] - expected).abs() < 1e-18);
        assert_eq!(snap.cloud.t_snap, 2.05e-6);
    }

    #[test]
    fn snapshot_out_of_range() {
        let e = linear_ensemble();
        assert!(matches!(
            snapshot_at(&e, 4.5e-6),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn snapshot_counts_escapes() {
        let params = OscillatorParams::reference_trap()
            .with_xi_um2(-0.1)
            .unwrap();
        let pulse = crate::pulse::make_squeeze_pulse(&params, 0.784, 0.0).unwrap();
        let cfg = SimConfig::new(2e-5, 1, 400);
        let mut e = crate::sde::simulate_ensemble(&params, &pulse, &cfg).unwrap();
        for k in [5, 77, 301] {
            e.trajectories[k].escaped_at = Some(1e-5);
        }
        let snap = snapshot_at(&e, 5e-6).unwrap();
        assert_eq!(snap.cloud.len(), 397);
        assert_eq!(snap.escaped, 3);
    }

    #[test]
    fn all_escaped_is_an_error() {
        let mut e = linear_ensemble();
        for t in &mut e.trajectories {
            t.escaped_at = Some(1e-6);
        }
        assert!(matches!(snapshot_at(&e, 1e-6), Err(Error::AllEscaped)));
    }

    #[test]
    fn normalization() {
        let c = PhaseCloud::new(
            0.0,
            vec![[0.0, 0.0], [0.0, 4.08e5 * 1e-6]],
            CloudSource::Simulated,
            4.08e5,
        )
        .unwrap();
        let n = c.normalize();
        assert_eq!(n.frame, Frame::Normalized);
        assert_eq!(n.points[0], [0.0, 0.0]);
        assert!((n.points[1][1] - 1e-6).abs() < 1e-20);
        assert_eq!(n.normalize(), n);
        assert_eq!(n.denormalize().points, c.points);
    }

    #[test]
    fn harmonic_orbit_is_circular_when_normalized() {
        let p = OscillatorParams::new(4.08e5, 0.0, 4.8e-19, 0.0, 0.0).unwrap();
        let period = 2.0 * std::f64::consts::PI / p.omega0();
        let cfg = SimConfig::new(period, 0, 1)
            .with_steps(1e-9, 1e-8)
            .with_integrator(crate::sde::Integrator::Heun)
            .with_init(InitCondition::Fixed { q: 1e-6, v: 0.0 });
        let tr = crate::sde::simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
        let pts: Vec<[f64; 2]> = tr.samples.iter().map(|s| [s.q, s.v]).collect();
        let c = PhaseCloud::new(0.0, pts, CloudSource::Simulated, p.omega0())
            .unwrap()
            .normalize();
        let radii: Vec<f64> = c.points.iter().map(|p| p[0].hypot(p[1])).collect();
        let max = radii.iter().copied().fold(0.0, f64::max);
        let min = radii.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.001, "{}", max / min);
    }

    #[test]
    fn csv_round_trip() {
        let c = cloud();
        let text = cloud_to_csv(&c, &[("seed".into(), "42".into())]);
        assert!(text.starts_with("# t_snap_us=77.5\n# source=simulated\n# omega_ref_rad_s=408000\n# seed=42\nq_m,v_m_per_s\n"));
        let back = cloud_from_csv(&text).unwrap();
        assert_eq!(back.points, c.points);
        assert!((back.t_snap - c.t_snap).abs() <= 1e-12 * c.t_snap);
        assert_eq!(back.source, c.source);
        assert_eq!(back.omega_ref, c.omega_ref);
    }

    #[test]
    fn normalized_clouds_are_written_physically() {
        let c = cloud();
        let back = cloud_from_csv(&cloud_to_csv(&c.normalize(), &[])).unwrap();
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a[1] - b[1]).abs() <= 1e-15 * b[1].abs());
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = "# t_snap_us=1\n# source=imported\n# omega_ref_rad_s=1\nq_m\n1.0\n";
        let err = cloud_from_csv(text).unwrap_err().to_string();
        assert!(err.contains("v_m_per_s") && err.contains("line 4"), "{err}");
        let text = "# t_snap_us=1\n# source=imported\n# omega_ref_rad_s=1\nq_m,v_m_per_s\n1.0\n";
        let err = cloud_from_csv(text).unwrap_err().to_string();
        assert!(err.contains("v_m_per_s") && err.contains("line 5"), "{err}");
    }

    #[test]
    fn non_numeric_row_reports_line() {
        let text =
            "# t_snap_us=1\n# source=imported\n# omega_ref_rad_s=1\nq_m,v_m_per_s\n1.0,2.0\nx,3\n";
        let err = cloud_from_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 6") && err.contains("q_m"), "{err}");
        let err = cloud_from_csv("q_m,v_m_per_s\n").unwrap_err().to_string();
        assert!(err.contains("t_snap_us"), "{err}");
    }

    #[test]
    fn empty_cloud_file_is_valid_but_unusable() {
        let text = "# t_snap_us=10\n# source=imported\n# omega_ref_rad_s=408000\nq_m,v_m_per_s\n";
        let c = cloud_from_csv(text).unwrap();
        assert!(c.is_empty());
        assert!(!c.is_usable());
        assert!(compare_clouds(&c, &cloud(), PValueMethod::Asymptotic, 0).is_err());
    }

    #[test]
    fn ensemble_csv_round_trip() {
        let e = linear_ensemble();
        let back = ensemble_from_csv(&ensemble_to_csv(&e, &[])).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn chain_validation() {
        let p = OscillatorParams::reference_trap();
        let chain = MeasurementChain::for_params(&p);
        assert!(chain.validate().is_ok());
        assert!(MeasurementChain {
            band_halfwidth: 70e3,
            ..chain
        }
        .validate()
        .is_err());
        assert!(MeasurementChain {
            sample_rate: 2e5,
            ..chain
        }
        .validate()
        .is_err());
        assert!(MeasurementChain { order: 0, ..chain }.validate().is_err());
    }

    #[test]
    fn measurement_of_pure_tone() {
        let p = OscillatorParams::new(4.08e5, 0.0, 4.8e-19, 0.0, 0.0).unwrap();
        let chain = MeasurementChain::for_params(&p);
        let cfg = SimConfig::new(4e-4, 0, 1).with_init(InitCondition::Fixed { q: 1e-6, v: 0.0 });
        let tr = crate::sde::simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
        let m = synth_measurement(&tr, &chain).unwrap();
        // Past ten filter time constants the measured state tracks the true one.
        for s in tr.samples.iter().skip(3000).step_by(7) {
            let got = m.at(s.t).unwrap();
            assert!((got[0] - s.q).abs() < 0.02e-6, "{} vs {}", got[0], s.q);
            assert!((got[1] - s.v).abs() < 0.02 * 0.408, "{} vs {}", got[1], s.v);
        }
        // The start of the record is distorted.
        let early = m.at(1e-6).unwrap();
        let truth = state_at(&tr, 1e-6).unwrap();
        assert!((early[0] - truth[0]).abs() > 0.1e-6);
    }

    #[test]
    fn decimation_requires_integer_ratio() {
        let p = OscillatorParams::reference_trap();
        let chain = MeasurementChain {
            sample_rate: 3e6,
            ..MeasurementChain::for_params(&p)
        };
        let cfg = SimConfig::new(1e-5, 0, 1);
        let tr = crate::sde::simulate_trajectory(&p, &PulseSchedule::inactive(), &cfg, 0).unwrap();
        assert!(synth_measurement(&tr, &chain).is_err());
        let ok = MeasurementChain {
            sample_rate: 5e6,
            ..chain
        };
        assert_eq!(synth_measurement(&tr, &ok).unwrap().dt, 2e-7);
    }
}
