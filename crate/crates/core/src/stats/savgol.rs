use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Hat matrix `H = X (XᵀX)⁻¹ Xᵀ` of a polynomial least-squares fit over a
/// window. Row `j` holds the weights that evaluate the fitted polynomial at
/// window position `j`.
pub fn savgol_coefficients(window: usize, order: usize) -> Result<DMatrix<f64>> {
    if window.is_multiple_of(2) {
        return Err(invalid("window", format!("must be odd, got {window}")));
    }
    if window <= order {
        return Err(invalid(
            "window",
            format!("must exceed the polynomial order ({window} <= {order})"),
        ));
    }
    let half = (window / 2).max(1) as f64;
    let vander = DMatrix::from_fn(window, order + 1, |i, k| {
        let x = (i as f64 - (window / 2) as f64) / half;
        x.powi(k as i32)
    });
    let q = vander.qr().q();
    Ok(&q * q.transpose())
}

/// Savitzky–Golay smoothing. Interior points take the value of the window
/// polynomial at its centre; the first and last `window / 2` points are
/// evaluated off-centre on the first and last full windows.
pub fn savgol_smooth(y: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    let hat = savgol_coefficients(window, order)?;
    if y.len() < window {
        return Err(invalid(
            "window",
            format!("series of length {} shorter than window {window}", y.len()),
        ));
    }
    let half = window / 2;
    let n = y.len();
    let apply = |row: usize, start: usize| -> f64 {
        (0..window).map(|k| hat[(row, k)] * y[start + k]).sum()
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let value = if i < half {
            apply(i, 0)
        } else if i + half >= n {
            apply(i + window - n, n - window)
        } else {
            apply(half, i - half)
        };
        out.push(value);
    }
    Ok(out)
}
