//! Similarity-based choice of which source subjects take part in transfer.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::numerics::pearson_or_zero;
use crate::trca::Trc;

/// How the trigger compares similarities against `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    /// Fires when some `|c_n| > gamma`, consistent with the absolute-value normalization.
    #[default]
    Absolute,
    /// Fires when some signed `c_n > gamma`.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub gamma: f64,
    pub c_lb: f64,
    /// When false every source is used (plain iTRCA).
    pub enabled: bool,
    #[serde(default)]
    pub trigger: TriggerMode,
    /// Reuse the first sub-band's selection for all sub-bands.
    #[serde(default)]
    pub share_across_subbands: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            c_lb: 0.9,
            enabled: true,
            trigger: TriggerMode::Absolute,
            share_across_subbands: false,
        }
    }
}

impl SelectionConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return arg_err(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.c_lb) {
            return arg_err(format!("c_lb must be in [0, 1], got {}", self.c_lb));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// 0-based source positions, ascending.
    pub selected: Vec<usize>,
    pub triggered: bool,
}

/// Pearson correlation between the target TRC and each source TRC, in input order.
/// A constant TRC on either side scores 0.
pub fn similarity(target: &Trc, sources: &[&Trc]) -> Result<Vec<f64>> {
    if sources.is_empty() {
        return dim_err("similarity needs at least one source TRC");
    }
    sources
        .iter()
        .map(|s| {
            if s.samples.len() != target.samples.len() {
                return dim_err(format!(
                    "source TRC of subject {} has {} samples, target has {}",
                    s.subject_id,
                    s.samples.len(),
                    target.samples.len()
                ));
            }
            pearson_or_zero(&target.samples, &s.samples)
        })
        .collect()
}

/// Trigger, normalize and threshold the raw similarities.
///
/// `c_lb = 0` keeps every source and `c_lb = 1` keeps none, whether or not the
/// trigger fires. In between, an untriggered report keeps every source and a
/// triggered one keeps `{n : |c_n| / max_k |c_k| > c_lb}`, which always
/// contains the most similar source.
pub fn select_subjects(raw: &[f64], config: &SelectionConfig) -> Result<SimilarityReport> {
    if raw.is_empty() {
        return dim_err("select_subjects needs at least one similarity value");
    }
    config.validate()?;
    let max_abs = raw.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let trigger_value = match config.trigger {
        TriggerMode::Absolute => max_abs,
        TriggerMode::Signed => raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let triggered = max_abs > 0.0 && trigger_value > config.gamma;
    let normalized: Vec<f64> = if max_abs > 0.0 {
        raw.iter().map(|c| c.abs() / max_abs).collect()
    } else {
        vec![0.0; raw.len()]
    };

    let all: Vec<usize> = (0..raw.len()).collect();
    let selected = if config.c_lb >= 1.0 {
        Vec::new()
    } else if config.c_lb <= 0.0 || !triggered {
        all
    } else {
        all.into_iter().filter(|&n| normalized[n] > config.c_lb).collect()
    };
    Ok(SimilarityReport {
        raw: raw.to_vec(),
        normalized,
        selected,
        triggered,
    })
}
