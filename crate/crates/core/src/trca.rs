//! Task-related component analysis: spatial filters that maximize the
//! covariance between repeated trials of the same stimulus.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::numerics::{cross_covariance, project, solve_rayleigh, Matrix, Vector};

/// All training blocks of one subject for one stimulus.
#[derive(Debug, Clone)]
pub struct StimulusTrials {
    pub trials: Vec<Matrix>,
    pub stimulus_index: usize,
}

impl StimulusTrials {
    pub fn new(stimulus_index: usize, trials: Vec<Matrix>) -> Result<Self> {
        if let Some(first) = trials.first() {
            if trials.iter().any(|t| t.shape() != first.shape()) {
                return dim_err("trials of one stimulus must share channels and samples");
            }
        }
        Ok(Self { trials, stimulus_index })
    }

    fn require_blocks(&self, min: usize) -> Result<()> {
        if self.trials.len() < min {
            return arg_err(format!(
                "stimulus {} has {} blocks, at least {min} required",
                self.stimulus_index,
                self.trials.len()
            ));
        }
        Ok(())
    }
}

/// Inter-trial covariance `S` and summed auto-covariance `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrcaMatrices {
    pub s: Matrix,
    pub q: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFilter {
    pub weights: Vector,
    pub stimulus_index: usize,
}

impl SpatialFilter {
    pub fn n_channels(&self) -> usize {
        self.weights.len()
    }
}

/// Single-channel task-related component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trc {
    pub samples: Vec<f64>,
    pub subject_id: usize,
    pub stimulus_index: usize,
}

/// Source TRCs stacked one row per source subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTemplate {
    pub rows: Matrix,
    pub subject_ids: Vec<usize>,
}

impl SourceTemplate {
    pub fn empty(n_samples: usize) -> Self {
        Self {
            rows: Matrix::zeros(0, n_samples),
            subject_ids: Vec::new(),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.n_sources() == 0
    }
}

/// Element-wise mean over blocks (the individual template).
pub fn grand_average(trials: &StimulusTrials) -> Result<Matrix> {
    trials.require_blocks(1)?;
    let mut sum = trials.trials[0].clone();
    for t in &trials.trials[1..] {
        sum += t;
    }
    Ok(sum / trials.trials.len() as f64)
}

/// `S = Σ_{h1≠h2} Cov(X_h1, X_h2)` over ordered pairs, `Q = Σ_h Cov(X_h, X_h)`.
pub fn trca_matrices(trials: &StimulusTrials) -> Result<TrcaMatrices> {
    trials.require_blocks(2)?;
    let n_c = trials.trials[0].nrows();
    let mut s = Matrix::zeros(n_c, n_c);
    let mut q = Matrix::zeros(n_c, n_c);
    for (h1, x1) in trials.trials.iter().enumerate() {
        for (h2, x2) in trials.trials.iter().enumerate() {
            if h1 == h2 {
                q += cross_covariance(x1, x1)?;
            } else {
                s += cross_covariance(x1, x2)?;
            }
        }
    }
    Ok(TrcaMatrices { s, q })
}

/// Top generalized eigenvector of `(S, Q)`.
pub fn trca_filter(trials: &StimulusTrials) -> Result<SpatialFilter> {
    let TrcaMatrices { s, q } = trca_matrices(trials)?;
    let pair = solve_rayleigh(&s, &q)?;
    Ok(SpatialFilter {
        weights: pair.eigenvector,
        stimulus_index: trials.stimulus_index,
    })
}

/// `wᵀ X̄`: the TRC of a template.
pub fn extract_trc(filter: &SpatialFilter, template: &Matrix, subject_id: usize) -> Result<Trc> {
    Ok(Trc {
        samples: project(&filter.weights, template)?,
        subject_id,
        stimulus_index: filter.stimulus_index,
    })
}

/// Stack TRCs row-wise in the order given.
pub fn build_source_template(trcs: &[&Trc]) -> Result<SourceTemplate> {
    let Some(first) = trcs.first() else {
        return dim_err("cannot build a source template from zero TRCs");
    };
    let n_s = first.samples.len();
    if let Some(bad) = trcs.iter().find(|t| t.samples.len() != n_s) {
        return dim_err(format!(
            "TRC of subject {} has {} samples, expected {n_s}",
            bad.subject_id,
            bad.samples.len()
        ));
    }
    let rows = Matrix::from_fn(trcs.len(), n_s, |r, c| trcs[r].samples[c]);
    Ok(SourceTemplate {
        rows,
        subject_ids: trcs.iter().map(|t| t.subject_id).collect(),
    })
}
