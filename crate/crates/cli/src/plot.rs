//! Static SVG 1.1 figures. Output depends only on the input data, so the
//! same CSV always gives the same bytes.

use std::fmt::Write as _;

use squeezefit::estimator::{pvalue_time_from_csv, sweep_from_csv, SIGNIFICANCE};
use squeezefit::estimator::{PVALUE_TIME_HEADER, SWEEP_HEADER};
use squeezefit::phasespace::{cloud_from_csv, CLOUD_HEADER, ENSEMBLE_HEADER};

use crate::failure::Failure;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Cloud,
    Sweep,
    PValueTime,
}

/// Identifies a CSV by its header line.
pub fn detect(text: &str) -> Result<InputKind, Failure> {
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    match header {
        h if h == CLOUD_HEADER => Ok(InputKind::Cloud),
        h if h == SWEEP_HEADER => Ok(InputKind::Sweep),
        h if h == PVALUE_TIME_HEADER => Ok(InputKind::PValueTime),
        h if h == ENSEMBLE_HEADER => Err(Failure::input(
            "ensemble files cannot be plotted directly; run `snapshot` first",
        )),
        h => Err(Failure::input(format!("unrecognised CSV header `{h}`"))),
    }
}

/// Renders any supported CSV. Clouds use normalised velocity unless
/// `physical` is set.
pub fn render(text: &str, physical: bool) -> Result<String, Failure> {
    match detect(text)? {
        InputKind::Cloud => {
            let c = cloud_from_csv(text)?;
            let pts: Vec<(f64, f64)> = if physical {
                c.points.iter().map(|p| (p[0] * 1e6, p[1])).collect()
            } else {
                c.normalize()
                    .points
                    .iter()
                    .map(|p| (p[0] * 1e6, p[1] * 1e6))
                    .collect()
            };
            let ylabel = if physical {
                "v (μm/μs)"
            } else {
                "v / ω₀ (μm)"
            };
            let mut fig = Figure::new(
                &format!(
                    "Phase space {:.1} μs after the pulse ({} points)",
                    c.t_snap * 1e6,
                    pts.len()
                ),
                "q (μm)",
                ylabel,
                Bounds::of(pts.iter().copied())
                    .padded(0.05)
                    .square_if(!physical),
            );
            fig.scatter(&pts, 1.6, "#1f4e9c", 0.6);
            Ok(fig.finish())
        }
        InputKind::Sweep => {
            let s = sweep_from_csv(text)?;
            let raw: Vec<(f64, f64)> = s
                .xi_grid_um2
                .iter()
                .copied()
                .zip(s.p_raw.iter().copied())
                .collect();
            let smooth: Vec<(f64, f64)> = s
                .xi_grid_um2
                .iter()
                .copied()
                .zip(s.p_smoothed.iter().copied())
                .collect();
            let mut b = Bounds::of(raw.iter().chain(&smooth).copied());
            b.y0 = b.y0.min(0.0);
            b.y1 = b.y1.max(1.0);
            let mut fig = Figure::new("P-value vs ξ", "ξ (μm⁻²)", "P-value", b.padded(0.03));
            fig.hline(SIGNIFICANCE, "#999999");
            fig.scatter(&raw, 2.2, "#555555", 0.8);
            fig.polyline(&smooth, "#1f4e9c", 2.0);
            if let Some(fit) = s.fit {
                let n = 400;
                let (lo, hi) = (s.xi_grid_um2[0], s.xi_grid_um2[s.len() - 1]);
                let curve: Vec<(f64, f64)> = (0..=n)
                    .map(|i| {
                        let x = lo + (hi - lo) * i as f64 / n as f64;
                        (x, fit.eval(x))
                    })
                    .collect();
                fig.polyline(&curve, "#c0392b", 1.6);
                fig.note(&format!(
                    "fit: μ = {:.4} μm⁻², σ = {:.4} μm⁻²",
                    fit.mean, fit.sigma
                ));
            }
            Ok(fig.finish())
        }
        InputKind::PValueTime => {
            let series = pvalue_time_from_csv(text)?;
            let mut b = Bounds::of(series.iter().copied());
            b.y0 = 0.0;
            b.y1 = b.y1.max(1.0);
            let mut fig = Figure::new(
                "P-value vs time after the pulse",
                "t (μs)",
                "P-value",
                b.padded(0.03),
            );
            fig.hline(SIGNIFICANCE, "#999999");
            fig.polyline(&series, "#1f4e9c", 1.4);
            fig.scatter(&series, 3.0, "#1f4e9c", 1.0);
            Ok(fig.finish())
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Bounds {
    fn of(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut b = Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x);
            b.y0 = b.y0.min(y);
            b.y1 = b.y1.max(y);
        }
        if !b.x0.is_finite() {
            return Bounds {
                x0: -1.0,
                x1: 1.0,
                y0: -1.0,
                y1: 1.0,
            };
        }
        b
    }

    fn padded(self, frac: f64) -> Self {
        let widen = |lo: f64, hi: f64| {
            let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
            (lo - frac * span, hi + frac * span)
        };
        let (x0, x1) = widen(self.x0, self.x1);
        let (y0, y1) = widen(self.y0, self.y1);
        Bounds { x0, x1, y0, y1 }
    }

    /// Equal symmetric ranges on both axes, so circular orbits look round.
    fn square_if(self, yes: bool) -> Self {
        if !yes {
            return self;
        }
        let r = [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Bounds {
            x0: -r,
            x1: r,
            y0: -r,
            y1: r,
        }
    }
}

/// "Nice" tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Figure {
    svg: String,
    b: Bounds,
    notes: usize,
}

impl Figure {
    fn new(title: &str, xlabel: &str, ylabel: &str, b: Bounds) -> Self {
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            svg,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let mut fig = Figure { svg, b, notes: 0 };
        fig.axes(xlabel, ylabel);
        fig
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.b.x0) / (self.b.x1 - self.b.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.b.y0) / (self.b.y1 - self.b.y0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            self.svg,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );
        let mut out = String::new();
        for t in ticks(self.b.x0, self.b.x1) {
            let x = self.px(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                y1 + 5.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y1 + 18.0,
                label(t)
            );
        }
        for t in ticks(self.b.y0, self.b.y1) {
            let y = self.py(t);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#,
                x0 - 5.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 8.0,
                y + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 15.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
        self.svg.push_str(&out);
    }

    fn scatter(&mut self, pts: &[(f64, f64)], r: f64, color: &str, opacity: f64) {
        let mut out = format!(r#"<g class="points" fill="{color}" fill-opacity="{opacity}">"#);
        out.push('\n');
        for &(x, y) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{r}"/>"#,
                self.px(x),
                self.py(y)
            );
        }
        out.push_str("</g>\n");
        self.svg.push_str(&out);
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    self.px(x),
                    self.py(y.clamp(self.b.y0, self.b.y1))
                )
            })
            .collect();
        let _ = writeln!(
            self.svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn hline(&mut self, y: f64, color: &str) {
        if y < self.b.y0 || y > self.b.y1 {
            return;
        }
        let py = self.py(y);
        let _ = writeln!(
            self.svg,
            r#"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
            WIDTH - RIGHT
        );
    }

    fn note(&mut self, text: &str) {
        self.notes += 1;
        let _ = writeln!(
            self.svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            WIDTH - RIGHT - 8.0,
            TOP + 16.0 * self.notes as f64,
            escape(text)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
