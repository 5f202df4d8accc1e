//! Instance-based transfer: source TRCs are weighted by CCA against the target
//! template, and the resulting subject-general feature is fused with the
//! target's own TRCA feature in every sub-band.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::numerics::{cca_first_pair, pearson_or_zero, project, Matrix, Vector};
use crate::selection::{select_subjects, similarity, SelectionConfig, SimilarityReport};
use crate::signal::FilterBank;
use crate::tensor::EpochTensor;
use crate::trca::{
    build_source_template, extract_trc, grand_average, trca_filter, SourceTemplate, SpatialFilter, StimulusTrials, Trc,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Trca,
    Itrca,
    SsItrca,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Trca, Algorithm::Itrca, Algorithm::SsItrca];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Trca => "trca",
            Algorithm::Itrca => "itrca",
            Algorithm::SsItrca => "ss-itrca",
        }
    }

    pub fn uses_sources(&self) -> bool {
        !matches!(self, Algorithm::Trca)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trca" => Ok(Algorithm::Trca),
            "itrca" => Ok(Algorithm::Itrca),
            "ss-itrca" | "ssitrca" => Ok(Algorithm::SsItrca),
            other => arg_err(format!("unknown algorithm {other:?} (trca|itrca|ss-itrca)")),
        }
    }
}

/// CCA weights mapping the source template and the target template into a
/// shared latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWeights {
    /// One weight per selected source subject.
    pub w_gs: Vector,
    /// Spatial filter over target channels.
    pub w_gt: Vector,
    pub correlation: f64,
}

/// Everything trained for one stimulus in one sub-band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusModel {
    pub stimulus_index: usize,
    pub target_filter: SpatialFilter,
    pub target_template: Matrix,
    /// Rows restricted to the selected sources; empty for TRCA or an empty selection.
    pub source_template: SourceTemplate,
    pub latent: Option<LatentWeights>,
    pub similarity: Option<SimilarityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    pub bank: FilterBank,
    pub selection: SelectionConfig,
    pub n_channels: usize,
    pub n_samples: usize,
    /// `[sub-band][stimulus]`.
    pub per_subband: Vec<Vec<StimulusModel>>,
}

impl TrainedModel {
    pub fn n_stimuli(&self) -> usize {
        self.per_subband.first().map_or(0, Vec::len)
    }
}

/// Per-stimulus diagnostics of one classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// `[sub-band][stimulus]` subject-general correlations.
    pub rho1: Vec<Vec<f64>>,
    /// `[sub-band][stimulus]` subject-specific correlations.
    pub rho2: Vec<Vec<f64>>,
    /// `[sub-band][stimulus]` fused features.
    pub rho: Vec<Vec<f64>>,
    /// Filter-bank combined score per stimulus.
    pub r: Vec<f64>,
}

/// Source TRCs of one subject, `[sub-band][stimulus]`, computed from all its blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInstances {
    pub subject_id: usize,
    pub trcs: Vec<Vec<Trc>>,
}

/// Filter every trial of `tensor` through the bank; one tensor per sub-band.
pub fn decompose_tensor(tensor: &EpochTensor, bank: &FilterBank) -> Result<Vec<EpochTensor>> {
    let [n_f, n_c, n_s, n_b] = tensor.dims();
    if n_s < bank.min_samples() {
        return dim_err(format!(
            "trials have {n_s} samples, the filter bank needs at least {}",
            bank.min_samples()
        ));
    }
    let mut out = vec![EpochTensor::zeros(n_f, n_c, n_s, n_b); bank.n_subbands()];
    for i in 0..n_f {
        for b in 0..n_b {
            for (m, band) in bank.decompose(&tensor.trial(i, b))?.iter().enumerate() {
                out[m].set_trial(i, b, band)?;
            }
        }
    }
    Ok(out)
}

fn stimulus_trials(subband: &EpochTensor, stimulus: usize) -> Result<StimulusTrials> {
    StimulusTrials::new(stimulus, subband.stimulus_trials(stimulus))
}

/// TRCs of a source subject from its sub-band tensors.
pub fn source_instances(subject_id: usize, subbands: &[EpochTensor]) -> Result<SourceInstances> {
    let trcs = subbands
        .iter()
        .map(|band| {
            if band.n_blocks() < 2 {
                return arg_err(format!(
                    "source subject {subject_id} has {} blocks, at least 2 required",
                    band.n_blocks()
                ));
            }
            (0..band.n_stimuli())
                .map(|i| {
                    let trials = stimulus_trials(band, i)?;
                    let filter = trca_filter(&trials)?;
                    extract_trc(&filter, &grand_average(&trials)?, subject_id)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceInstances { subject_id, trcs })
}

fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

fn all_selected(raw: Vec<f64>) -> SimilarityReport {
    let max_abs = raw.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let normalized = raw
        .iter()
        .map(|c| if max_abs > 0.0 { c.abs() / max_abs } else { 0.0 })
        .collect();
    SimilarityReport {
        selected: (0..raw.len()).collect(),
        raw,
        normalized,
        triggered: false,
    }
}

struct FitContext<'a> {
    algorithm: Algorithm,
    target: &'a [EpochTensor],
    sources: &'a [SourceInstances],
    selection: &'a SelectionConfig,
}

impl FitContext<'_> {
    fn fit_cell(&self, m: usize, i: usize, forced: Option<&[usize]>) -> Result<StimulusModel> {
        let trials = stimulus_trials(&self.target[m], i)?;
        let target_filter = trca_filter(&trials)?;
        let target_template = grand_average(&trials)?;
        let n_s = target_template.ncols();
        let mut model = StimulusModel {
            stimulus_index: i,
            source_template: SourceTemplate::empty(n_s),
            latent: None,
            similarity: None,
            target_filter,
            target_template,
        };
        if !self.algorithm.uses_sources() || self.sources.is_empty() {
            return Ok(model);
        }

        let target_trc = extract_trc(&model.target_filter, &model.target_template, usize::MAX)?;
        let source_trcs: Vec<&Trc> = self.sources.iter().map(|s| &s.trcs[m][i]).collect();
        let raw = similarity(&target_trc, &source_trcs)?;
        let mut report = match self.algorithm {
            Algorithm::SsItrca => select_subjects(&raw, self.selection)?,
            _ => all_selected(raw),
        };
        if let Some(shared) = forced {
            report.selected = shared.to_vec();
        }
        let chosen: Vec<&Trc> = report.selected.iter().map(|&n| source_trcs[n]).collect();
        model.similarity = Some(report);
        if chosen.is_empty() {
            return Ok(model);
        }
        let source_template = build_source_template(&chosen)?;
        let cca = cca_first_pair(&source_template.rows, &model.target_template)?;
        model.latent = Some(LatentWeights {
            w_gs: cca.weight_a,
            w_gt: cca.weight_b,
            correlation: cca.correlation,
        });
        model.source_template = source_template;
        Ok(model)
    }
}

/// Train from pre-filtered target sub-bands and precomputed source TRCs.
///
/// `target` holds only the target's training blocks. Sources are ignored for
/// [`Algorithm::Trca`]; [`Algorithm::Itrca`] uses all of them and
/// [`Algorithm::SsItrca`] applies `selection`.
pub fn fit_from_subbands(
    algorithm: Algorithm,
    target: &[EpochTensor],
    sources: &[SourceInstances],
    bank: &FilterBank,
    selection: &SelectionConfig,
) -> Result<TrainedModel> {
    selection.validate()?;
    if target.len() != bank.n_subbands() {
        return dim_err(format!(
            "{} target sub-bands for a {}-band filter bank",
            target.len(),
            bank.n_subbands()
        ));
    }
    let [n_f, n_c, n_s, n_b] = target[0].dims();
    if n_b < 2 {
        return arg_err(format!("target has {n_b} training blocks, at least 2 required"));
    }
    if algorithm.uses_sources() {
        for s in sources {
            if s.trcs.len() != target.len()
                || s.trcs.iter().any(|band| band.len() != n_f)
                || s.trcs.iter().flatten().any(|t| t.samples.len() != n_s)
            {
                return dim_err(format!(
                    "source subject {} does not match the target's sub-bands, stimuli or samples",
                    s.subject_id
                ));
            }
        }
    }

    let ctx = FitContext {
        algorithm,
        target,
        sources,
        selection,
    };
    let n_m = target.len();
    let cells = map_indices(n_m * n_f, |k| ctx.fit_cell(k / n_f, k % n_f, None));
    let mut per_subband: Vec<Vec<StimulusModel>> = Vec::with_capacity(n_m);
    let mut cells = cells.into_iter();
    for _ in 0..n_m {
        per_subband.push(cells.by_ref().take(n_f).collect::<Result<Vec<_>>>()?);
    }

    if algorithm == Algorithm::SsItrca && selection.share_across_subbands && n_m > 1 {
        let shared: Vec<Vec<usize>> = per_subband[0]
            .iter()
            .map(|cell| cell.similarity.as_ref().map_or(Vec::new(), |r| r.selected.clone()))
            .collect();
        let rest = map_indices((n_m - 1) * n_f, |k| {
            let (m, i) = (1 + k / n_f, k % n_f);
            ctx.fit_cell(m, i, Some(&shared[i]))
        });
        let mut rest = rest.into_iter();
        for band in per_subband.iter_mut().skip(1) {
            *band = rest.by_ref().take(n_f).collect::<Result<Vec<_>>>()?;
        }
    }

    Ok(TrainedModel {
        algorithm,
        bank: bank.clone(),
        selection: *selection,
        n_channels: n_c,
        n_samples: n_s,
        per_subband,
    })
}

fn check_same_subject_layout(target: &EpochTensor, sources: &[EpochTensor]) -> Result<()> {
    let [n_f, n_c, n_s, _] = target.dims();
    for (k, s) in sources.iter().enumerate() {
        let [f, c, t, _] = s.dims();
        if (f, c, t) != (n_f, n_c, n_s) {
            return dim_err(format!(
                "source {k} is {f}x{c}x{t}, target is {n_f}x{n_c}x{n_s} (stimuli x channels x samples)"
            ));
        }
    }
    Ok(())
}

/// Train iTRCA (or SS-iTRCA when `selection.enabled`) from raw trial tensors.
/// Source subject ids are their positions in `sources`.
pub fn fit_itrca(
    target: &EpochTensor,
    sources: &[EpochTensor],
    bank: &FilterBank,
    selection: &SelectionConfig,
) -> Result<TrainedModel> {
    check_same_subject_layout(target, sources)?;
    let target_bands = decompose_tensor(target, bank)?;
    let instances = sources
        .iter()
        .enumerate()
        .map(|(k, s)| source_instances(k, &decompose_tensor(s, bank)?))
        .collect::<Result<Vec<_>>>()?;
    let algorithm = if selection.enabled {
        Algorithm::SsItrca
    } else {
        Algorithm::Itrca
    };
    fit_from_subbands(algorithm, &target_bands, &instances, bank, selection)
}

/// Filter-bank TRCA on the target's own data.
pub fn fit_trca(target: &EpochTensor, bank: &FilterBank) -> Result<TrainedModel> {
    let target_bands = decompose_tensor(target, bank)?;
    fit_from_subbands(Algorithm::Trca, &target_bands, &[], bank, &SelectionConfig::disabled())
}

fn check_test_shape(model: &StimulusModel, test: &Matrix) -> Result<()> {
    if test.shape() != model.target_template.shape() {
        return dim_err(format!(
            "test trial is {:?}, model expects {:?}",
            test.shape(),
            model.target_template.shape()
        ));
    }
    Ok(())
}

/// Correlation of the latent-filtered test trial with the weighted source
/// template; 0 when no source was selected.
pub fn subject_general_feature(model: &StimulusModel, test: &Matrix) -> Result<f64> {
    check_test_shape(model, test)?;
    let Some(latent) = &model.latent else {
        return Ok(0.0);
    };
    let probe = project(&latent.w_gt, test)?;
    let reference = project(&latent.w_gs, &model.source_template.rows)?;
    pearson_or_zero(&probe, &reference)
}

/// Correlation of the TRCA-filtered test trial with the filtered target template.
pub fn subject_specific_feature(model: &StimulusModel, test: &Matrix) -> Result<f64> {
    check_test_shape(model, test)?;
    let w = &model.target_filter.weights;
    pearson_or_zero(&project(w, test)?, &project(w, &model.target_template)?)
}

/// `sign(ρ₁)ρ₁² + sign(ρ₂)ρ₂²` with `sign(0) = 0`.
pub fn combine_feature(rho1: f64, rho2: f64) -> f64 {
    rho1 * rho1.abs() + rho2 * rho2.abs()
}

/// Weighted sum of per-sub-band features.
pub fn fb_combine(per_subband_rho: &[f64], weights: &[f64]) -> Result<f64> {
    if per_subband_rho.len() != weights.len() {
        return dim_err(format!(
            "{} sub-band features for {} weights",
            per_subband_rho.len(),
            weights.len()
        ));
    }
    Ok(per_subband_rho.iter().zip(weights).map(|(r, w)| r * w).sum())
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Classify a trial that has already been decomposed into the model's sub-bands.
pub fn classify_subbands(model: &TrainedModel, subbands: &[Matrix]) -> Result<(usize, FeatureVector)> {
    if subbands.len() != model.per_subband.len() {
        return dim_err(format!(
            "{} sub-band trials for a {}-band model",
            subbands.len(),
            model.per_subband.len()
        ));
    }
    let n_f = model.n_stimuli();
    let mut fv = FeatureVector {
        rho1: Vec::with_capacity(subbands.len()),
        rho2: Vec::with_capacity(subbands.len()),
        rho: Vec::with_capacity(subbands.len()),
        r: vec![0.0; n_f],
    };
    for (cells, trial) in model.per_subband.iter().zip(subbands) {
        let mut r1 = Vec::with_capacity(n_f);
        let mut r2 = Vec::with_capacity(n_f);
        for cell in cells {
            r1.push(subject_general_feature(cell, trial)?);
            r2.push(subject_specific_feature(cell, trial)?);
        }
        fv.rho
            .push(r1.iter().zip(&r2).map(|(&a, &b)| combine_feature(a, b)).collect());
        fv.rho1.push(r1);
        fv.rho2.push(r2);
    }
    let weights = model.bank.weights();
    for i in 0..n_f {
        let column: Vec<f64> = fv.rho.iter().map(|band| band[i]).collect();
        fv.r[i] = fb_combine(&column, weights)?;
    }
    let predicted = argmax_lowest(&fv.r).ok_or_else(|| Error::Degenerate("model has no stimuli".into()))?;
    Ok((predicted, fv))
}

/// Decompose `trial` with the model's filter bank and classify it.
pub fn classify(model: &TrainedModel, trial: &Matrix) -> Result<(usize, FeatureVector)> {
    if trial.shape() != (model.n_channels, model.n_samples) {
        return dim_err(format!(
            "test trial is {:?}, model expects ({}, {})",
            trial.shape(),
            model.n_channels,
            model.n_samples
        ));
    }
    let bands = model.bank.decompose(trial)?;
    classify_subbands(model, &bands)
}
