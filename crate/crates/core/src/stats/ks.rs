use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this effective sample size the asymptotic p-value is flagged.
pub const MIN_RELIABLE_N_EFF: f64 = 20.0;

/// Minimum points per cloud for a trustworthy 2D statistic.
const MIN_POINTS_2D: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    /// `n m / (n + m)`.
    pub n_eff: f64,
    /// Set when the asymptotic p-value approximation is outside its validity
    /// range (small samples).
    pub low_confidence: bool,
}

fn n_eff(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    n * m / (n + m)
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`.
///
/// For small λ the alternating series converges slowly, so the equivalent
/// theta-function form `1 - √(2π)/λ Σ_{j≥1} exp(-(2j-1)² π² / (8 λ²))` is
/// used below λ = 0.5.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let sum = if lambda < 0.5 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for j in 1.. {
            let k = (2 * j - 1) as f64;
            let term = (-k * k * c).exp();
            s += term;
            if term < 1e-12 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        let mut sign = 1.0;
        for j in 1.. {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            s += sign * term;
            sign = -sign;
            if term < 1e-12 {
                break;
            }
        }
        2.0 * s
    };
    sum.clamp(0.0, 1.0)
}

/// Two-sample KS test on scalar samples, with the Stephens small-sample
/// correction `λ = (√n_eff + 0.12 + 0.11/√n_eff) d`.
pub fn ks_1d(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("ks_1d needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);

    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }

    let ne = n_eff(a.len(), b.len());
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok(KsResult {
        d_statistic: d,
        p_value: kolmogorov_q(lambda),
        n_eff: ne,
        low_confidence: ne < MIN_RELIABLE_N_EFF,
    })
}

/// Pearson correlation of the two coordinates; 0 when either has no spread.
pub fn pearson(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Fractions of `points` strictly inside each of the four quadrants around
/// `origin`. Points on a dividing line (including the origin) count nowhere.
fn quadrant_fractions(origin: [f64; 2], points: &[[f64; 2]]) -> [f64; 4] {
    let mut c = [0usize; 4];
    for p in points {
        let right = p[0] > origin[0];
        let left = p[0] < origin[0];
        let up = p[1] > origin[1];
        let down = p[1] < origin[1];
        if right && up {
            c[0] += 1;
        } else if left && up {
            c[1] += 1;
        } else if left && down {
            c[2] += 1;
        } else if right && down {
            c[3] += 1;
        }
    }
    let n = points.len() as f64;
    c.map(|k| k as f64 / n)
}

fn max_quadrant_difference(origins: &[[f64; 2]], a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    origins
        .iter()
        .map(|&o| {
            let fa = quadrant_fractions(o, a);
            let fb = quadrant_fractions(o, b);
            (0..4).map(|k| (fa[k] - fb[k]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Fasano–Franceschini statistic: the mean of the largest quadrant-fraction
/// discrepancy found with origins at the points of `a`, and with origins at
/// the points of `b`.
pub fn ks_2d_statistic(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let d1 = max_quadrant_difference(a, a, b);
    let d2 = max_quadrant_difference(b, a, b);
    0.5 * (d1 + d2)
}

/// Two-sample 2D KS test (Fasano–Franceschini) with the correlation-corrected
/// asymptotic p-value.
pub fn ks_2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("ks_2d needs two non-empty clouds"));
    }
    if a.iter()
        .chain(b)
        .any(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(Error::Degenerate("non-finite point in KS input".into()));
    }
    let d = ks_2d_statistic(a, b);
    let ne = n_eff(a.len(), b.len());
    let sq = ne.sqrt();
    let r = 0.5 * (pearson(a) + pearson(b));
    let lambda = sq * d / (1.0 + (1.0 - r * r).max(0.0).sqrt() * (0.25 - 0.75 / sq));
    Ok(KsResult {
        d_statistic: d,
        p_value: kolmogorov_q(lambda),
        n_eff: ne,
        low_confidence: a.len() < MIN_POINTS_2D
            || b.len() < MIN_POINTS_2D
            || ne < MIN_RELIABLE_N_EFF,
    })
}

/// Quadrant of every point around every origin in a pooled sample, so the
/// statistic can be re-evaluated cheaply under relabelings.
struct QuadrantTable {
    n: usize,
    /// `codes[o * n + j]`: quadrant 0..4 of point `j` around point `o`, or 4
    /// when `j` lies on a dividing line.
    codes: Vec<u8>,
}

impl QuadrantTable {
    fn new(points: &[[f64; 2]]) -> Self {
        let n = points.len();
        let mut codes = Vec::with_capacity(n * n);
        for o in points {
            for p in points {
                let code = if p[0] > o[0] && p[1] > o[1] {
                    0
                } else if p[0] < o[0] && p[1] > o[1] {
                    1
                } else if p[0] < o[0] && p[1] < o[1] {
                    2
                } else if p[0] > o[0] && p[1] < o[1] {
                    3
                } else {
                    4
                };
                codes.push(code);
            }
        }
        Self { n, codes }
    }

    /// Statistic for the split where `in_b[j]` marks membership of the
    /// second sample.
    fn statistic(&self, in_b: &[bool], n_b: usize) -> f64 {
        let n_a = self.n - n_b;
        let (fa, fb) = (1.0 / n_a as f64, 1.0 / n_b as f64);
        let (mut d1, mut d2) = (0.0f64, 0.0f64);
        for o in 0..self.n {
            let row = &self.codes[o * self.n..(o + 1) * self.n];
            let mut counts = [[0u32; 5]; 2];
            for (&code, &b) in row.iter().zip(in_b) {
                counts[b as usize][code as usize] += 1;
            }
            let d = (0..4)
                .map(|k| (counts[0][k] as f64 * fa - counts[1][k] as f64 * fb).abs())
                .fold(0.0, f64::max);
            if in_b[o] {
                d2 = d2.max(d);
            } else {
                d1 = d1.max(d);
            }
        }
        0.5 * (d1 + d2)
    }
}

/// Permutation p-value for the 2D statistic: `(k + 1) / (B + 1)` where `k`
/// of `B` random relabelings of the pooled points reach the observed
/// statistic. Exact under the null hypothesis of exchangeable samples.
pub fn ks_2d_permutation(
    a: &[[f64; 2]],
    b: &[[f64; 2]],
    permutations: usize,
    seed: u64,
) -> Result<KsResult> {
    let base = ks_2d(a, b)?;
    let pooled: Vec<[f64; 2]> = a.iter().chain(b).copied().collect();
    let table = QuadrantTable::new(&pooled);
    let mut labels: Vec<bool> = (0..pooled.len()).map(|j| j >= a.len()).collect();
    let observed = table.statistic(&labels, b.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        if table.statistic(&labels, b.len()) >= observed - 1e-12 {
            exceed += 1;
        }
    }
    Ok(KsResult {
        d_statistic: observed,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        low_confidence: a.len() < MIN_POINTS_2D || b.len() < MIN_POINTS_2D,
        ..base
    })
}

/// How the 2D test converts its statistic into a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PValueMethod {
    /// Correlation-corrected Kolmogorov tail. Accurate only in the tail
    /// (p below about 0.2); larger p-values are biased low.
    Asymptotic,
    /// Relabeling test with the given number of permutations.
    Permutation { permutations: usize },
}

impl Default for PValueMethod {
    fn default() -> Self {
        PValueMethod::Permutation { permutations: 199 }
    }
}

/// 2D two-sample test with the chosen p-value method; `seed` drives the
/// permutations and is ignored by the asymptotic method.
pub fn ks_2d_with(
    a: &[[f64; 2]],
    b: &[[f64; 2]],
    method: PValueMethod,
    seed: u64,
) -> Result<KsResult> {
    match method {
        PValueMethod::Asymptotic => ks_2d(a, b),
        PValueMethod::Permutation { permutations } => ks_2d_permutation(a, b, permutations, seed),
    }
}
