//! Chebyshev Type I bandpass design via analog prototype, lowpass-to-bandpass
//! transform and bilinear mapping (zero/pole/gain form throughout).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Prototype order; the digital bandpass has twice as many poles.
    pub order: usize,
    pub ripple_db: f64,
}

impl BandpassSpec {
    pub fn new(low_hz: f64, high_hz: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            order: 4,
            ripple_db: 0.5,
        }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(fs > 0.0) {
            return arg_err(format!("sampling rate must be positive, got {fs}"));
        }
        let nyquist = fs / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return arg_err(format!(
                "band edges must satisfy 0 < low < high, got [{}, {}] Hz",
                self.low_hz, self.high_hz
            ));
        }
        if self.high_hz >= nyquist {
            return arg_err(format!(
                "upper band edge {} Hz is at or beyond Nyquist ({nyquist} Hz)",
                self.high_hz
            ));
        }
        if self.order < 2 {
            return arg_err(format!("filter order must be >= 2, got {}", self.order));
        }
        if !(self.ripple_db > 0.0) {
            return arg_err(format!("passband ripple must be positive, got {}", self.ripple_db));
        }
        Ok(())
    }
}

/// Transfer-function coefficients (`a[0] == 1`) plus the poles they were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(with = "complex_vec")]
    pub poles: Vec<Complex64>,
}

impl FilterCoefficients {
    /// Order of the digital filter (`len(a) - 1`).
    pub fn order(&self) -> usize {
        self.a.len() - 1
    }

    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.norm() < 1.0)
    }

    /// Complex response `H(e^{jω})` at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / fs;
        let zinv = Complex64::from_polar(1.0, -w);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &ck| acc * zinv + ck)
        };
        eval(&self.b) / eval(&self.a)
    }

    pub fn gain_db(&self, freq_hz: f64, fs: f64) -> f64 {
        20.0 * self.response(freq_hz, fs).norm().log10()
    }
}

/// Analog lowpass prototype poles and gain (cutoff 1 rad/s, no zeros).
fn cheb1_prototype(order: usize, ripple_db: f64) -> (Vec<Complex64>, f64) {
    let eps = (10f64.powf(0.1 * ripple_db) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / order as f64;
    let n = order as i64;
    let poles: Vec<Complex64> = (0..n)
        .map(|k| {
            let m = (-n + 1 + 2 * k) as f64;
            let theta = PI * m / (2.0 * order as f64);
            -Complex64::new(mu, theta).sinh()
        })
        .collect();
    let mut gain = poles.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * -p).re;
    if order.is_multiple_of(2) {
        gain /= (1.0 + eps * eps).sqrt();
    }
    (poles, gain)
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs
}

/// Digital Chebyshev Type I bandpass for sampling rate `fs`.
pub fn design_bandpass(spec: &BandpassSpec, fs: f64) -> Result<FilterCoefficients> {
    spec.validate(fs)?;
    let order = spec.order;
    let (proto_poles, proto_gain) = cheb1_prototype(order, spec.ripple_db);

    // Pre-warp edges for a bilinear transform with unit sample period scaled to fs = 2.
    let warp = |f: f64| 4.0 * (PI * (2.0 * f / fs) / 2.0).tan();
    let w1 = warp(spec.low_hz);
    let w2 = warp(spec.high_hz);
    let bw = w2 - w1;
    let wo = (w1 * w2).sqrt();

    // Lowpass -> bandpass: every pole splits in two, N zeros land at s = 0.
    let mut analog_poles = Vec::with_capacity(2 * order);
    for p in &proto_poles {
        let scaled = p * (bw / 2.0);
        let disc = (scaled * scaled - wo * wo).sqrt();
        analog_poles.push(scaled + disc);
    }
    for p in &proto_poles {
        let scaled = p * (bw / 2.0);
        let disc = (scaled * scaled - wo * wo).sqrt();
        analog_poles.push(scaled - disc);
    }
    let analog_gain = proto_gain * bw.powi(order as i32);

    // Bilinear transform, fs2 = 2 * 2.
    let fs2 = Complex64::new(4.0, 0.0);
    let poles: Vec<Complex64> = analog_poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let mut zeros = vec![Complex64::new(1.0, 0.0); order];
    zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), order));
    let zero_term = fs2.powu(order as u32);
    let pole_term = analog_poles
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    let gain = analog_gain * (zero_term / pole_term).re;

    let b: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| c.re * gain).collect();
    let a: Vec<f64> = poly_from_roots(&poles).iter().map(|c| c.re).collect();
    Ok(FilterCoefficients { b, a, poles })
}

mod complex_vec {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_eeg_band_is_stable() {
        let f = design_bandpass(&BandpassSpec::new(8.0, 88.0), 250.0).unwrap();
        assert_eq!(f.order(), 8);
        assert_eq!(f.b.len(), 9);
        assert!(f.is_stable());
        for p in &f.poles {
            assert!(p.norm() < 1.0, "pole {p} outside unit circle");
        }
    }

    #[test]
    fn nyquist_violation_rejected() {
        assert!(design_bandpass(&BandpassSpec::new(8.0, 125.0), 250.0).is_err());
        assert!(design_bandpass(&BandpassSpec::new(8.0, 130.0), 250.0).is_err());
        assert!(design_bandpass(&BandpassSpec::new(40.0, 20.0), 250.0).is_err());
        let mut s = BandpassSpec::new(8.0, 88.0);
        s.order = 1;
        assert!(design_bandpass(&s, 250.0).is_err());
        s.order = 4;
        s.ripple_db = 0.0;
        assert!(design_bandpass(&s, 250.0).is_err());
    }

    #[test]
    fn passband_gain_within_ripple() {
        let spec = BandpassSpec::new(8.0, 88.0);
        let f = design_bandpass(&spec, 250.0).unwrap();
        let center = (8.0f64 * 88.0).sqrt();
        let g = f.gain_db(center, 250.0);
        assert!(g <= 1e-9 && g >= -spec.ripple_db - 1e-9, "gain {g} dB");
        // Whole passband stays inside the ripple envelope.
        for k in 0..=200 {
            let freq = 8.5 + (87.5 - 8.5) * k as f64 / 200.0;
            let g = f.gain_db(freq, 250.0);
            assert!(g <= 1e-6 && g >= -spec.ripple_db - 1e-6, "{freq} Hz: {g} dB");
        }
        // Band edges sit at -ripple.
        assert!((f.gain_db(8.0, 250.0) + spec.ripple_db).abs() < 1e-6);
        assert!((f.gain_db(88.0, 250.0) + spec.ripple_db).abs() < 1e-6);
        assert!(f.gain_db(2.0, 250.0) < -40.0);
    }

    #[test]
    fn odd_order_prototype() {
        let mut spec = BandpassSpec::new(10.0, 30.0);
        spec.order = 3;
        let f = design_bandpass(&spec, 256.0).unwrap();
        assert!(f.is_stable());
        // Odd-order Chebyshev I peaks at 0 dB at the passband center.
        let g = f.gain_db((10.0f64 * 30.0).sqrt(), 256.0);
        assert!(g.abs() < 0.6);
    }
}
