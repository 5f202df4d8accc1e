use nalgebra::{DMatrix, DVector};

use super::design::FilterCoefficients;
use crate::error::{dim_err, Error, Result};

/// Direct form II transposed IIR filter with optional initial state.
pub fn lfilter(coeffs: &FilterCoefficients, x: &[f64], zi: Option<&[f64]>) -> Vec<f64> {
    let b = &coeffs.b;
    let a = &coeffs.a;
    let n = a.len().max(b.len());
    let a0 = a[0];
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0) / a0;
    let mut z = vec![0.0; n - 1];
    if let Some(zi) = zi {
        z.copy_from_slice(&zi[..n - 1]);
    }
    let mut y = Vec::with_capacity(x.len());
    for &xn in x {
        let yn = coef(b, 0) * xn + z.first().copied().unwrap_or(0.0);
        for i in 0..n.saturating_sub(2) {
            z[i] = coef(b, i + 1) * xn + z[i + 1] - coef(a, i + 1) * yn;
        }
        if n >= 2 {
            z[n - 2] = coef(b, n - 1) * xn - coef(a, n - 1) * yn;
        }
        y.push(yn);
    }
    y
}

/// Steady-state filter state for a unit step input.
pub fn lfilter_zi(coeffs: &FilterCoefficients) -> Result<Vec<f64>> {
    let n = coeffs.a.len().max(coeffs.b.len());
    if n < 2 {
        return Ok(Vec::new());
    }
    let a0 = coeffs.a[0];
    let a: Vec<f64> = (0..n).map(|i| coeffs.a.get(i).copied().unwrap_or(0.0) / a0).collect();
    let b: Vec<f64> = (0..n).map(|i| coeffs.b.get(i).copied().unwrap_or(0.0) / a0).collect();
    let m = n - 1;
    // (I - companion(a)ᵀ) zi = b[1:] - a[1:] b[0]
    let mut lhs = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        lhs[(i, 0)] += a[i + 1];
        if i + 1 < m {
            lhs[(i, i + 1)] -= 1.0;
        }
    }
    let rhs = DVector::from_fn(m, |i, _| b[i + 1] - a[i + 1] * b[0]);
    let zi = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("filter has a pole at z = 1".into()))?;
    Ok(zi.iter().copied().collect())
}

/// Edge padding used by [`filtfilt`]: three times the number of coefficients.
pub fn pad_length(coeffs: &FilterCoefficients) -> usize {
    3 * coeffs.a.len().max(coeffs.b.len())
}

fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

fn run_with_steady_state(coeffs: &FilterCoefficients, zi: &[f64], x: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = zi.iter().map(|z| z * x[0]).collect();
    lfilter(coeffs, x, Some(&scaled))
}

fn reversed(mut v: Vec<f64>) -> Vec<f64> {
    v.reverse();
    v
}

/// Zero-phase forward-backward filtering.
///
/// The input is odd-reflected by [`pad_length`] samples on both ends and each
/// pass starts from the steady-state state scaled to its first sample. The
/// result is the mean of the forward-then-backward and backward-then-forward
/// orderings, so filtering a time-reversed signal gives exactly the reversed
/// output.
pub fn filtfilt(coeffs: &FilterCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    let pad = pad_length(coeffs);
    if x.len() <= pad {
        return dim_err(format!(
            "filtfilt needs more than {pad} samples for edge padding, got {}",
            x.len()
        ));
    }
    let zi = lfilter_zi(coeffs)?;
    let ext = odd_extend(x, pad);

    let fwd = run_with_steady_state(coeffs, &zi, &ext);
    let fwd_bwd = reversed(run_with_steady_state(coeffs, &zi, &reversed(fwd)));

    let bwd = reversed(run_with_steady_state(coeffs, &zi, &reversed(ext)));
    let bwd_fwd = run_with_steady_state(coeffs, &zi, &bwd);

    Ok(fwd_bwd[pad..pad + x.len()]
        .iter()
        .zip(&bwd_fwd[pad..pad + x.len()])
        .map(|(p, q)| 0.5 * (p + q))
        .collect())
}

/// Single forward pass from rest, for the non-zero-phase configuration.
pub fn causal_filter(coeffs: &FilterCoefficients, x: &[f64]) -> Vec<f64> {
    lfilter(coeffs, x, None)
}
