use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `amplitude * exp(-(x - mean)^2 / (2 sigma^2))` fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        gauss(x, self.amplitude, self.mean, self.sigma)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when every parameter changes by less than this relative amount.
    pub rel_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-9,
        }
    }
}

#[inline]
fn gauss(x: f64, a: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    a * (-0.5 * z * z).exp()
}

fn sum_sq(x: &[f64], y: &[f64], p: &Vector3<f64>) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - gauss(xi, p[0], p[1], p[2])).powi(2))
        .sum()
}

/// Initial guess: peak height and location from the maximum, width from the
/// half-maximum crossings (linearly interpolated).
fn initial_guess(x: &[f64], y: &[f64]) -> Vector3<f64> {
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let half = 0.5 * ymax;
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for i in range {
            if y[i] < half {
                let t = (y[prev] - half) / (y[prev] - y[i]);
                return Some(x[prev] + t * (x[i] - x[prev]));
            }
            prev = i;
        }
        None
    };
    let left = cross(&mut (0..imax).rev());
    let right = cross(&mut (imax + 1..y.len()));
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x[imax] - l),
        (None, Some(r)) => 2.0 * (r - x[imax]),
        (None, None) => 0.5 * (x[x.len() - 1] - x[0]).abs(),
    };
    let sigma = (fwhm.abs() / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())).max(f64::EPSILON);
    Vector3::new(ymax, x[imax], sigma)
}

pub fn gaussian_fit(x: &[f64], y: &[f64]) -> Result<GaussianFit> {
    gaussian_fit_with(x, y, FitOptions::default())
}

/// Levenberg–Marquardt fit with Marquardt diagonal scaling.
pub fn gaussian_fit_with(x: &[f64], y: &[f64], opts: FitOptions) -> Result<GaussianFit> {
    if x.len() != y.len() {
        return Err(Error::Degenerate(format!(
            "x and y lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 5 {
        return Err(Error::Degenerate(format!(
            "need at least 5 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite input".into()));
    }
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    if !(ymax > 0.0) {
        return Err(Error::Degenerate("max(y) must be positive".into()));
    }
    if ymax - ymin <= ymax * 1e-12 {
        return Err(Error::Degenerate("flat input has no peak".into()));
    }

    let n = x.len() as f64;
    let mut p = initial_guess(x, y);
    let mut cost = sum_sq(x, y, &p);
    let mut lambda = 1e-3;
    let rms = |c: f64| (c / n).sqrt();

    for iter in 1..=opts.max_iterations {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let (a, mu, s) = (p[0], p[1], p[2]);
            let g = gauss(xi, 1.0, mu, s);
            let dx = xi - mu;
            let jac = Vector3::new(g, a * g * dx / (s * s), a * g * dx * dx / (s * s * s));
            let r = yi - a * g;
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }

        loop {
            let mut lhs = jtj;
            for k in 0..3 {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = lhs.lu().solve(&jtr) else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    break;
                }
                continue;
            };
            let trial = p + delta;
            let trial_cost = sum_sq(x, y, &trial);
            if trial_cost.is_finite() && trial_cost <= cost && trial[2] != 0.0 {
                let small = (0..3).all(|k| delta[k].abs() <= opts.rel_tolerance * trial[k].abs());
                p = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                if small {
                    return finish(p, rms(cost), iter);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // No descent direction left at machine precision: this is the
                // minimum.
                return finish(p, rms(cost), iter);
            }
        }
        if cost == 0.0 {
            return finish(p, 0.0, iter);
        }
    }
    Err(Error::FitNotConverged {
        iterations: opts.max_iterations,
        rms_residual: rms(cost),
    })
}

fn finish(p: Vector3<f64>, rms_residual: f64, iterations: usize) -> Result<GaussianFit> {
    let fit = GaussianFit {
        amplitude: p[0],
        mean: p[1],
        sigma: p[2].abs(),
        rms_residual,
        iterations,
    };
    if !(fit.amplitude > 0.0 && fit.sigma > 0.0) {
        return Err(Error::Degenerate(format!(
            "fit collapsed to amplitude {} sigma {}",
            fit.amplitude, fit.sigma
        )));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn exact_gaussian_recovered() {
        let x = grid(300, -0.35, 0.15);
        let y: Vec<f64> = x.iter().map(|&v| gauss(v, 0.6, -0.1, 0.054)).collect();
        let fit = gaussian_fit(&x, &y).unwrap();
        assert!(((fit.amplitude - 0.6) / 0.6).abs() < 1e-6);
        assert!(((fit.mean + 0.1) / 0.1).abs() < 1e-6);
        assert!(((fit.sigma - 0.054) / 0.054).abs() < 1e-6);
        assert!(fit.rms_residual <= 1e-10);
    }

    #[test]
    fn noisy_gaussian_mean_is_stable() {
        let x = grid(300, -0.35, 0.15);
        let (a, mu, sigma) = (0.6, -0.1, 0.054);
        let good = (0..50)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y: Vec<f64> = x
                    .iter()
                    .map(|&v| gauss(v, a, mu, sigma) + rng.random_range(-0.05 * a..0.05 * a))
                    .collect();
                let fit = gaussian_fit(&x, &y).unwrap();
                (fit.mean - mu).abs() < sigma / 5.0
            })
            .count();
        assert!(good >= 48, "{good}/50");
    }

    #[test]
    fn peak_off_grid_edge() {
        let x = grid(40, 0.0, 1.0);
        let y: Vec<f64> = x.iter().map(|&v| gauss(v, 2.0, 1.1, 0.3)).collect();
        let fit = gaussian_fit(&x, &y).unwrap();
        assert!((fit.mean - 1.1).abs() < 1e-6);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let x = grid(10, 0.0, 1.0);
        assert!(gaussian_fit(&x, &[0.5; 10]).is_err());
        assert!(gaussian_fit(&x, &[-1.0; 10]).is_err());
        assert!(gaussian_fit(&x[..4], &[0.0, 1.0, 0.5, 0.1]).is_err());
    }
}
