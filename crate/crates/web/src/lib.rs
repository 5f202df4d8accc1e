//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function has a plain Rust counterpart returning
//! `Result<_, String>` so the logic is testable natively.

use wasm_bindgen::prelude::*;

use ssvep_xfer::eval::{build_cv_plan, itr, run_eval, EvalConfig};
use ssvep_xfer::selection::SelectionConfig;
use ssvep_xfer::signal::{design_bandpass, BandpassSpec, FilterBankSpec};
use ssvep_xfer::synth::{gen_dataset, SynthSpec};
use ssvep_xfer::transfer::Algorithm;

/// Gain in dB of a Chebyshev type I band-pass at `n_points` frequencies spread
/// evenly over `[0, fs/2]`.
pub fn band_response(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    ripple_db: f64,
    fs: f64,
    n_points: usize,
) -> Result<Vec<f64>, String> {
    if n_points < 2 {
        return Err("need at least 2 points".into());
    }
    let spec = BandpassSpec {
        order,
        ripple_db,
        ..BandpassSpec::new(low_hz, high_hz)
    };
    let coeffs = design_bandpass(&spec, fs).map_err(|e| e.to_string())?;
    Ok((0..n_points)
        .map(|k| {
            let f = k as f64 * (fs / 2.0) / (n_points - 1) as f64;
            coeffs.gain_db(f, fs).max(-120.0)
        })
        .collect())
}

/// ITR in bits/min for accuracies `0, 1/(n-1), …, 1`.
pub fn itr_points(n_targets: usize, selection_s: f64, n_points: usize) -> Result<Vec<f64>, String> {
    if n_points < 2 {
        return Err("need at least 2 points".into());
    }
    (0..n_points)
        .map(|k| itr(k as f64 / (n_points - 1) as f64, n_targets, selection_s).map_err(|e| e.to_string()))
        .collect()
}

/// Accuracies of TRCA, iTRCA and SS-iTRCA on a small two-cluster synthetic set.
pub fn simulate_accuracies(snr_db: f64, n_target_blocks: usize, c_lb: f64, seed: u64) -> Result<Vec<f64>, String> {
    let mut spec = SynthSpec::jfpm(4, &[3, 3], Some(snr_db), seed);
    spec.trial_length_s = 0.5;
    spec.n_blocks = 4;
    let data: Vec<_> = gen_dataset(&spec)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    let plan = build_cv_plan(data.len(), spec.n_blocks, n_target_blocks).map_err(|e| e.to_string())?;
    let bank = FilterBankSpec::m3(3, spec.fs, None).map_err(|e| e.to_string())?;
    Algorithm::ALL
        .iter()
        .map(|&algorithm| {
            let mut cfg = EvalConfig::new(bank.clone(), spec.fs, spec.trial_length_s);
            cfg.selection = SelectionConfig {
                c_lb,
                enabled: algorithm == Algorithm::SsItrca,
                ..SelectionConfig::default()
            };
            run_eval(&data, &plan, algorithm, &cfg)
                .map(|r| r.accuracy)
                .map_err(|e| e.to_string())
        })
        .collect()
}

#[wasm_bindgen]
pub fn filter_response(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    ripple_db: f64,
    fs: f64,
    n_points: usize,
) -> Result<Vec<f64>, JsError> {
    band_response(low_hz, high_hz, order, ripple_db, fs, n_points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn itr_curve(n_targets: usize, selection_s: f64, n_points: usize) -> Result<Vec<f64>, JsError> {
    itr_points(n_targets, selection_s, n_points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(snr_db: f64, n_target_blocks: usize, c_lb: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    simulate_accuracies(snr_db, n_target_blocks, c_lb, seed).map_err(|e| JsError::new(&e))
}
