//! Digital Butterworth band-pass filter in second-order sections, designed by
//! the bilinear transform with the centre frequency pre-warped so the
//! response at the centre is exactly unity gain with zero phase.

use nalgebra::Complex;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    /// Numerator `b0 + b1 z^-1 + b2 z^-2`.
    pub b: [f64; 3],
    /// Denominator `1 + a1 z^-1 + a2 z^-2` (leading one implied).
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex<f64>) -> Complex<f64> {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex::new(1.0, 0.0) + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }
}

/// Cascade of biquads applied with zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub sample_rate: f64,
}

impl SosFilter {
    /// Band-pass of prototype order `order` (the cascade has `order`
    /// sections, `2 * order` poles) passing `center ± halfwidth` Hz.
    pub fn butterworth_bandpass(
        order: usize,
        center_hz: f64,
        halfwidth_hz: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(invalid("order", "must be >= 1"));
        }
        if !(halfwidth_hz > 0.0 && halfwidth_hz < center_hz) {
            return Err(invalid(
                "band_halfwidth",
                "must satisfy 0 < halfwidth < center",
            ));
        }
        let nyquist = 0.5 * sample_rate;
        if !(center_hz + halfwidth_hz < nyquist) {
            return Err(invalid("sample_rate", "upper band edge above Nyquist"));
        }

        let k = 2.0 * sample_rate;
        let warp = |f: f64| k * (std::f64::consts::PI * f / sample_rate).tan();
        let w0 = warp(center_hz);
        let bw = warp(center_hz + halfwidth_hz) - warp(center_hz - halfwidth_hz);

        // Prototype poles on the left half of the unit circle, each mapped to
        // two band-pass poles by s -> (s^2 + w0^2) / (bw s).
        let mut zpoles = Vec::with_capacity(2 * order);
        for i in 0..order {
            let theta = std::f64::consts::PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let p = Complex::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - Complex::new(4.0 * w0 * w0, 0.0)).sqrt();
            for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
                zpoles.push((Complex::new(k, 0.0) + s) / (Complex::new(k, 0.0) - s));
            }
        }

        let scale = 1e-9;
        let mut upper: Vec<Complex<f64>> =
            zpoles.iter().copied().filter(|z| z.im > scale).collect();
        let mut real: Vec<f64> = zpoles
            .iter()
            .filter(|z| z.im.abs() <= scale)
            .map(|z| z.re)
            .collect();
        upper.sort_by(|a, b| a.re.total_cmp(&b.re));
        real.sort_by(f64::total_cmp);

        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|z| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            })
            .collect();
        for pair in real.chunks(2) {
            let (z1, z2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(z1 + z2), z1 * z2],
            });
        }
        debug_assert_eq!(sections.len(), order);

        let mut filter = Self {
            sections,
            sample_rate,
        };
        let g = filter.response(center_hz).norm();
        let per_section = g.powf(-1.0 / order as f64);
        for s in &mut filter.sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Ok(filter)
    }

    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex<f64> {
        let w = 2.0 * std::f64::consts::PI * f_hz / self.sample_rate;
        let z_inv = Complex::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Forward (causal) pass starting from rest; transients are kept.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }
}
