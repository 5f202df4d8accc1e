//! Bandpass design, zero-phase filtering, filter-bank decomposition and epoching.

mod design;
mod filter;

pub use design::{design_bandpass, BandpassSpec, FilterCoefficients};
pub use filter::{causal_filter, filtfilt, lfilter, lfilter_zi, pad_length};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::numerics::Matrix;
use crate::tensor::EpochTensor;

/// Default visual latency after stimulus onset, seconds.
pub const LATENCY_S: f64 = 0.14;
/// Default gaze-shift period preceding the stimulus, seconds.
pub const GAZE_SHIFT_S: f64 = 0.5;
/// Default lower edge of the first sub-band, and spacing between sub-band lower edges.
pub const SUBBAND_STEP_HZ: f64 = 8.0;
/// Default upper edge shared by all sub-bands.
pub const SUBBAND_CEILING_HZ: f64 = 88.0;

/// Sub-band weight `m^-1.25 + 0.25` for the 1-based sub-band index `m`.
pub fn subband_weight(m: usize) -> f64 {
    (m as f64).powf(-1.25) + 0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBankSpec {
    pub bands: Vec<BandpassSpec>,
    pub weights: Vec<f64>,
    /// Forward-backward filtering when set, a single causal pass otherwise.
    pub zero_phase: bool,
}

impl FilterBankSpec {
    /// Sub-band `m` (1-based) spans `[8m, upper]` Hz with
    /// `upper = min(88, 0.95·fs/2, ceiling_hz)`.
    pub fn m3(n_subbands: usize, fs: f64, ceiling_hz: Option<f64>) -> Result<Self> {
        if n_subbands == 0 {
            return arg_err("filter bank needs at least one sub-band");
        }
        let upper = SUBBAND_CEILING_HZ
            .min(0.95 * fs / 2.0)
            .min(ceiling_hz.unwrap_or(f64::INFINITY));
        let bands = (1..=n_subbands)
            .map(|m| BandpassSpec::new(SUBBAND_STEP_HZ * m as f64, upper))
            .collect();
        let spec = Self::with_bands(bands);
        spec.validate(fs)?;
        Ok(spec)
    }

    /// Bands as given, weighted by [`subband_weight`].
    pub fn with_bands(bands: Vec<BandpassSpec>) -> Self {
        let weights = (1..=bands.len()).map(subband_weight).collect();
        Self {
            bands,
            weights,
            zero_phase: true,
        }
    }

    pub fn n_subbands(&self) -> usize {
        self.bands.len()
    }

    pub fn set_order(&mut self, order: usize, ripple_db: f64) {
        for b in &mut self.bands {
            b.order = order;
            b.ripple_db = ripple_db;
        }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.bands.is_empty() {
            return arg_err("filter bank has no bands");
        }
        if self.bands.len() != self.weights.len() {
            return dim_err(format!("{} bands but {} weights", self.bands.len(), self.weights.len()));
        }
        for b in &self.bands {
            b.validate(fs)?;
        }
        Ok(())
    }
}

/// A filter bank with its coefficients designed for one sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub spec: FilterBankSpec,
    pub fs: f64,
    pub filters: Vec<FilterCoefficients>,
}

impl FilterBank {
    pub fn design(spec: &FilterBankSpec, fs: f64) -> Result<Self> {
        spec.validate(fs)?;
        let filters = spec
            .bands
            .iter()
            .map(|b| design_bandpass(b, fs))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            fs,
            filters,
        })
    }

    pub fn n_subbands(&self) -> usize {
        self.filters.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.spec.weights
    }

    /// Shortest trial every band can filter.
    pub fn min_samples(&self) -> usize {
        if self.spec.zero_phase {
            self.filters.iter().map(pad_length).max().unwrap_or(0) + 1
        } else {
            1
        }
    }

    fn filter_row(&self, band: usize, x: &[f64]) -> Result<Vec<f64>> {
        let f = &self.filters[band];
        if self.spec.zero_phase {
            filtfilt(f, x)
        } else {
            Ok(causal_filter(f, x))
        }
    }

    /// One channel-wise filtered copy of `trial` per sub-band.
    pub fn decompose(&self, trial: &Matrix) -> Result<Vec<Matrix>> {
        (0..self.n_subbands())
            .map(|band| {
                let mut out = Matrix::zeros(trial.nrows(), trial.ncols());
                for (c, row) in trial.row_iter().enumerate() {
                    let samples: Vec<f64> = row.iter().copied().collect();
                    let filtered = self.filter_row(band, &samples)?;
                    for (t, v) in filtered.into_iter().enumerate() {
                        out[(c, t)] = v;
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// Design `spec` for `fs` and decompose a single trial.
pub fn subband_decompose(trial: &Matrix, spec: &FilterBankSpec, fs: f64) -> Result<Vec<Matrix>> {
    FilterBank::design(spec, fs)?.decompose(trial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochWindow {
    /// Start of the window relative to the start of the recording, seconds.
    pub onset_s: f64,
    pub length_s: f64,
    pub fs: f64,
}

impl EpochWindow {
    /// `[0.5 + 0.14, 0.5 + 0.14 + d]` s, the default analysis window after the cue.
    pub fn after_cue(length_s: f64, fs: f64) -> Self {
        Self {
            onset_s: GAZE_SHIFT_S + LATENCY_S,
            length_s,
            fs,
        }
    }

    // Small slack so that e.g. 0.29 * 100 lands on sample 29.
    fn samples_for(&self, seconds: f64) -> usize {
        (seconds * self.fs + 1e-9).floor() as usize
    }

    pub fn start_sample(&self) -> usize {
        self.samples_for(self.onset_s)
    }

    pub fn n_samples(&self) -> usize {
        self.samples_for(self.length_s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset_s >= 0.0) {
            return arg_err(format!("window onset must be >= 0, got {}", self.onset_s));
        }
        if !(self.length_s > 0.0) || !(self.fs > 0.0) {
            return arg_err("window length and sampling rate must be positive");
        }
        if self.n_samples() < 2 {
            return arg_err(format!(
                "window of {} s at {} Hz holds fewer than 2 samples",
                self.length_s, self.fs
            ));
        }
        Ok(())
    }
}

/// Copy the columns `[start, start + n)` selected by `window`.
pub fn extract_epoch(continuous: &Matrix, window: &EpochWindow) -> Result<Matrix> {
    window.validate()?;
    let start = window.start_sample();
    let n = window.n_samples();
    if start + n > continuous.ncols() {
        return dim_err(format!(
            "window [{start}, {}) exceeds recording of {} samples",
            start + n,
            continuous.ncols()
        ));
    }
    Ok(continuous.columns(start, n).into_owned())
}

/// Apply `window` to every trial of `tensor`.
pub fn epoch_tensor(tensor: &EpochTensor, window: &EpochWindow) -> Result<EpochTensor> {
    tensor.map_trials(|trial| extract_epoch(trial, window))
}
