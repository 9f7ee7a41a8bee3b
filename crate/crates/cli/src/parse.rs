//! Command-line value parsers.

use crate::failure::Failure;

/// Parses a duration such as `77.5us`, `77.5μs`, `0.2ms`, `1e-5s` or `80ns`
/// into seconds. A bare number is read as microseconds.
pub fn parse_time(s: &str) -> Result<f64, Failure> {
    let s = s.trim();
    let (num, scale) = [
        ("us", 1e-6),
        ("μs", 1e-6),
        ("µs", 1e-6),
        ("ms", 1e-3),
        ("ns", 1e-9),
        ("s", 1.0),
    ]
    .iter()
    .find_map(|(suffix, scale)| s.strip_suffix(suffix).map(|n| (n, *scale)))
    .unwrap_or((s, 1e-6));
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("invalid time `{s}` (expected e.g. 77.5us)")))?;
    if !(value.is_finite() && value >= 0.0) {
        return Err(Failure::usage(format!(
            "time `{s}` must be finite and >= 0"
        )));
    }
    Ok(value * scale)
}

/// Parses `lo:hi:n`.
pub fn parse_grid(s: &str) -> Result<(f64, f64, usize), Failure> {
    let bad = || {
        Failure::config(format!(
            "invalid grid `{s}` (expected lo:hi:n, e.g. -0.35:0.15:300)"
        ))
    };
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Failure::config(format!("grid `{s}` needs finite lo < hi")));
    }
    if n < squeezefit::estimator::MIN_GRID_POINTS {
        return Err(Failure::config(format!(
            "grid `{s}` needs at least {} points",
            squeezefit::estimator::MIN_GRID_POINTS
        )));
    }
    Ok((lo, hi, n))
}
