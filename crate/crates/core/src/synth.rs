//! Synthetic multi-subject SSVEP recordings with known ground truth.
//!
//! Each stimulus evokes a harmonic series `Σ_k a_k sin(2π k f t + k φ + ψ_k)`.
//! Subjects belong to clusters; the per-harmonic amplitudes `a_k` and phase
//! offsets `ψ_k` come from the cluster's prototype plus a small per-subject
//! jitter. The response is projected onto the channels by a random subject
//! mixing vector and buried in spatially mixed pink noise at the subject's SNR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Matrix;
use crate::tensor::EpochTensor;

/// How cluster prototypes relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterLayout {
    /// Every cluster draws its own prototype.
    #[default]
    Independent,
    /// Cluster `c` reuses cluster 0's amplitudes with every harmonic phase
    /// advanced by `c·π/2`, so cross-cluster responses are nearly uncorrelated.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: u64,
    pub cluster: usize,
    /// `None` generates noise-free trials.
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub fs: f64,
    pub trial_length_s: f64,
    pub n_blocks: usize,
    pub n_channels: usize,
    pub n_harmonics: usize,
    /// Harmonic `k` has nominal amplitude `k^-decay`.
    #[serde(default = "default_decay")]
    pub harmonic_decay: f64,
    pub subjects: Vec<SubjectSpec>,
    pub seed: u64,
    #[serde(default)]
    pub cluster_layout: ClusterLayout,
    /// Relative standard deviation of subject amplitudes around the prototype.
    #[serde(default = "default_amplitude_jitter")]
    pub amplitude_jitter: f64,
    /// Standard deviation of subject phase offsets around the prototype, radians.
    #[serde(default = "default_phase_jitter")]
    pub phase_jitter: f64,
    /// Relative standard deviation of each trial's harmonic amplitudes around the
    /// subject's response. Applies only to noisy subjects.
    #[serde(default = "default_trial_amplitude_jitter")]
    pub trial_amplitude_jitter: f64,
    /// Standard deviation of each trial's harmonic phases, radians. Applies only
    /// to noisy subjects.
    #[serde(default = "default_trial_phase_jitter")]
    pub trial_phase_jitter: f64,
    /// Band in which SNR is measured against the subject's mean response, Hz.
    #[serde(default = "default_snr_band")]
    pub snr_band_hz: [f64; 2],
}

fn default_decay() -> f64 {
    1.0
}
fn default_amplitude_jitter() -> f64 {
    0.1
}
fn default_phase_jitter() -> f64 {
    0.2
}
fn default_trial_amplitude_jitter() -> f64 {
    0.3
}
fn default_trial_phase_jitter() -> f64 {
    0.6
}
fn default_snr_band() -> [f64; 2] {
    [8.0, 40.0]
}

impl SynthSpec {
    /// Joint frequency-phase layout `f_i = 9.25 + 0.5 i` Hz, `φ_i = 0.5π i`
    /// (12-target speller spacing), 250 Hz, 1 s trials, 4 blocks, 9 channels,
    /// 5 harmonics. Subjects are numbered consecutively and filled into
    /// clusters of the given sizes.
    pub fn jfpm(n_stimuli: usize, cluster_sizes: &[usize], snr_db: Option<f64>, seed: u64) -> Self {
        Self::with_layout(
            (0..n_stimuli).map(|i| 9.25 + 0.5 * i as f64).collect(),
            (0..n_stimuli).map(|i| (0.5 * PI * i as f64) % (2.0 * PI)).collect(),
            cluster_sizes,
            snr_db,
            seed,
        )
    }

    /// Like [`SynthSpec::jfpm`] with the 40-target spacing `f_i = 8 + 0.2 i` Hz,
    /// `φ_i = 0.35π i`.
    pub fn benchmark(n_stimuli: usize, cluster_sizes: &[usize], snr_db: Option<f64>, seed: u64) -> Self {
        Self::with_layout(
            (0..n_stimuli).map(|i| 8.0 + 0.2 * i as f64).collect(),
            (0..n_stimuli).map(|i| (0.35 * PI * i as f64) % (2.0 * PI)).collect(),
            cluster_sizes,
            snr_db,
            seed,
        )
    }

    fn with_layout(
        frequencies: Vec<f64>,
        phases: Vec<f64>,
        cluster_sizes: &[usize],
        snr_db: Option<f64>,
        seed: u64,
    ) -> Self {
        let mut subjects = Vec::new();
        for (cluster, &size) in cluster_sizes.iter().enumerate() {
            for _ in 0..size {
                subjects.push(SubjectSpec {
                    id: subjects.len() as u64,
                    cluster,
                    snr_db,
                });
            }
        }
        Self {
            frequencies,
            phases,
            fs: 250.0,
            trial_length_s: 1.0,
            n_blocks: 4,
            n_channels: 9,
            n_harmonics: 5,
            harmonic_decay: default_decay(),
            subjects,
            seed,
            cluster_layout: ClusterLayout::Independent,
            amplitude_jitter: default_amplitude_jitter(),
            phase_jitter: default_phase_jitter(),
            trial_amplitude_jitter: default_trial_amplitude_jitter(),
            trial_phase_jitter: default_trial_phase_jitter(),
            snr_band_hz: default_snr_band(),
        }
    }

    pub fn n_stimuli(&self) -> usize {
        self.frequencies.len()
    }

    pub fn n_samples(&self) -> usize {
        (self.trial_length_s * self.fs + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let n_f = self.frequencies.len();
        if n_f == 0 {
            return arg_err("at least one stimulus frequency is required");
        }
        if self.phases.len() != n_f {
            return arg_err(format!("{n_f} frequencies but {} phases", self.phases.len()));
        }
        for (i, f) in self.frequencies.iter().enumerate() {
            if !(*f > 0.0) {
                return arg_err(format!("frequency {i} must be positive, got {f}"));
            }
            if self.frequencies[..i].contains(f) {
                return arg_err(format!("frequency {f} Hz appears twice"));
            }
        }
        if self.n_harmonics == 0 {
            return arg_err("n_harmonics must be >= 1");
        }
        let top = self.frequencies.iter().cloned().fold(0.0, f64::max) * self.n_harmonics as f64;
        if !(self.fs > 2.0 * top) {
            return arg_err(format!(
                "sampling rate {} Hz does not exceed twice the highest harmonic ({top} Hz)",
                self.fs
            ));
        }
        if self.n_samples() < 2 {
            return arg_err("trials must contain at least 2 samples");
        }
        if self.n_blocks == 0 || self.n_channels == 0 {
            return arg_err("n_blocks and n_channels must be positive");
        }
        if self.subjects.is_empty() {
            return arg_err("at least one subject is required");
        }
        Ok(())
    }
}

/// What generated one subject's tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_id: u64,
    pub cluster: usize,
    /// Noise-free response per stimulus, before spatial mixing.
    pub latent: Vec<Vec<f64>>,
    /// `channels × 1` projection of the response onto the scalp.
    pub mixing: Matrix,
    /// Stimulus index of every trial in `(stimulus, block)` order.
    pub labels: Vec<usize>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream(seed: u64, domain: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain ^ splitmix64(key))))
}

const CLUSTER_DOMAIN: u64 = 0xC1;
const SUBJECT_DOMAIN: u64 = 0x5B;

/// `(amplitude, phase offset)` per stimulus and harmonic.
type Prototype = Vec<Vec<(f64, f64)>>;

fn draw_prototype(spec: &SynthSpec, cluster: usize) -> Prototype {
    let mut rng = stream(spec.seed, CLUSTER_DOMAIN, cluster as u64);
    (0..spec.n_stimuli())
        .map(|_| {
            (1..=spec.n_harmonics)
                .map(|k| {
                    let amp = (k as f64).powf(-spec.harmonic_decay) * rng.random_range(0.7..1.3);
                    (amp, rng.random_range(0.0..2.0 * PI))
                })
                .collect()
        })
        .collect()
}

fn cluster_prototype(spec: &SynthSpec, cluster: usize) -> Prototype {
    match spec.cluster_layout {
        ClusterLayout::Independent => draw_prototype(spec, cluster),
        ClusterLayout::Quadrature => {
            let shift = cluster as f64 * PI / 2.0;
            draw_prototype(spec, 0)
                .into_iter()
                .map(|h| h.into_iter().map(|(a, p)| (a, p + shift)).collect())
                .collect()
        }
    }
}

/// 1/f noise with unit-variance white input, DC removed.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let bin = k.min(n - k) as f64;
        *v /= bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Power of `x` between `lo` and `hi` Hz (one-sided, Parseval-normalized).
pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64, planner: &mut FftPlanner<f64>) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut p = 0.0;
    for (k, v) in buf.iter().enumerate() {
        let freq = k.min(n - k) as f64 * fs / n as f64;
        if freq >= lo && freq <= hi {
            p += v.norm_sqr();
        }
    }
    p / (n as f64 * n as f64)
}

fn harmonic_sum(spec: &SynthSpec, stimulus: usize, harmonics: &[(f64, f64)]) -> Vec<f64> {
    let (f, phi) = (spec.frequencies[stimulus], spec.phases[stimulus]);
    (0..spec.n_samples())
        .map(|t| {
            let time = t as f64 / spec.fs;
            harmonics
                .iter()
                .enumerate()
                .map(|(k0, &(a, psi))| {
                    let k = (k0 + 1) as f64;
                    a * (2.0 * PI * k * f * time + k * phi + psi).sin()
                })
                .sum()
        })
        .collect()
}

/// One subject's trials and the ground truth that produced them.
pub fn gen_subject(spec: &SynthSpec, subject: &SubjectSpec) -> Result<(EpochTensor, GroundTruth)> {
    spec.validate()?;
    let prototype = cluster_prototype(spec, subject.cluster);
    let mut rng = stream(spec.seed, SUBJECT_DOMAIN, subject.id);
    let (n_f, n_c, n_s, n_b) = (spec.n_stimuli(), spec.n_channels, spec.n_samples(), spec.n_blocks);

    let harmonics: Vec<Vec<(f64, f64)>> = prototype
        .iter()
        .map(|stim| {
            stim.iter()
                .map(|&(a, p)| {
                    let g: f64 = rng.sample(StandardNormal);
                    let d: f64 = rng.sample(StandardNormal);
                    (
                        (a * (1.0 + spec.amplitude_jitter * g)).max(0.05 * a),
                        p + spec.phase_jitter * d,
                    )
                })
                .collect()
        })
        .collect();
    let latent: Vec<Vec<f64>> = (0..n_f).map(|i| harmonic_sum(spec, i, &harmonics[i])).collect();

    let mut mixing = Matrix::from_fn(n_c, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    if mixing.norm() == 0.0 {
        mixing[(0, 0)] = 1.0;
    }
    // Half the noise power is shared through 2·n_c mixed background sources,
    // half is independent per sensor; this keeps the noise covariance well
    // conditioned so no spatial direction is noise-free.
    let n_bg = 2 * n_c;
    let bg_scale = (1.0 / n_bg as f64).sqrt();
    let noise_mixing = Matrix::from_fn(n_c, n_bg, |_, _| bg_scale * rng.sample::<f64, _>(StandardNormal));

    let mut planner = FftPlanner::new();
    let [lo, hi] = spec.snr_band_hz;
    let mut tensor = EpochTensor::zeros(n_f, n_c, n_s, n_b);
    let mut labels = Vec::with_capacity(n_f * n_b);
    for (i, response) in latent.iter().enumerate() {
        let row = Matrix::from_row_slice(1, n_s, response);
        let clean = &mixing * &row;
        let signal_power = match subject.snr_db {
            Some(_) => {
                clean
                    .row_iter()
                    .map(|r| band_power(&r.iter().copied().collect::<Vec<_>>(), spec.fs, lo, hi, &mut planner))
                    .sum::<f64>()
                    / n_c as f64
            }
            None => 0.0,
        };
        for b in 0..n_b {
            let mut trial = clean.clone();
            if let Some(snr_db) = subject.snr_db {
                if spec.trial_amplitude_jitter > 0.0 || spec.trial_phase_jitter > 0.0 {
                    let jittered: Vec<(f64, f64)> = harmonics[i]
                        .iter()
                        .map(|&(a, p)| {
                            let g: f64 = rng.sample(StandardNormal);
                            let d: f64 = rng.sample(StandardNormal);
                            (
                                (a * (1.0 + spec.trial_amplitude_jitter * g)).max(0.0),
                                p + spec.trial_phase_jitter * d,
                            )
                        })
                        .collect();
                    let row = Matrix::from_row_slice(1, n_s, &harmonic_sum(spec, i, &jittered));
                    trial = &mixing * row;
                }
                let mut background = Matrix::zeros(n_bg, n_s);
                for r in 0..n_bg {
                    let pink = pink_noise(&mut rng, n_s, &mut planner);
                    background.row_mut(r).copy_from_slice(&pink);
                }
                let mut noise = &noise_mixing * background;
                for c in 0..n_c {
                    let pink = pink_noise(&mut rng, n_s, &mut planner);
                    for (v, p) in noise.row_mut(c).iter_mut().zip(pink) {
                        *v += p;
                    }
                }
                let noise_power = noise
                    .row_iter()
                    .map(|r| band_power(&r.iter().copied().collect::<Vec<_>>(), spec.fs, lo, hi, &mut planner))
                    .sum::<f64>()
                    / n_c as f64;
                if noise_power > 0.0 {
                    let target = signal_power / 10f64.powf(snr_db / 10.0);
                    trial += noise * (target / noise_power).sqrt();
                }
            }
            tensor.set_trial(i, b, &trial)?;
            labels.push(i);
        }
    }
    Ok((
        tensor,
        GroundTruth {
            subject_id: subject.id,
            cluster: subject.cluster,
            latent,
            mixing,
            labels,
        },
    ))
}

/// Every subject of `spec`, in order.
pub fn gen_dataset(spec: &SynthSpec) -> Result<Vec<(EpochTensor, GroundTruth)>> {
    spec.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        spec.subjects.par_iter().map(|s| gen_subject(spec, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        spec.subjects.iter().map(|s| gen_subject(spec, s)).collect()
    }
}
