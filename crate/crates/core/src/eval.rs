//! Leave-one-subject-out / leave-one-block-out evaluation.
//!
//! Every subject takes a turn as the target; the others are sources and
//! contribute all of their blocks. Within the target, every block takes a turn
//! as the test block and the `n_target_blocks` blocks that follow it
//! (cyclically) are used for training.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::selection::SelectionConfig;
use crate::signal::{FilterBank, FilterBankSpec, GAZE_SHIFT_S};
use crate::tensor::EpochTensor;
use crate::transfer::{classify, decompose_tensor, fit_from_subbands, source_instances, Algorithm, SourceInstances};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub target_subject: usize,
    pub test_block: usize,
    pub training_blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n_subjects: usize,
    pub n_blocks: usize,
    pub n_target_blocks: usize,
    pub folds: Vec<Fold>,
}

pub fn build_cv_plan(n_subjects: usize, n_blocks: usize, n_target_blocks: usize) -> Result<CvPlan> {
    if n_subjects < 2 {
        return arg_err(format!(
            "cross-subject evaluation needs >= 2 subjects, got {n_subjects}"
        ));
    }
    if n_target_blocks == 0 || n_target_blocks + 1 > n_blocks {
        return arg_err(format!(
            "n_target_blocks must be in [1, {}], got {n_target_blocks}",
            n_blocks.saturating_sub(1)
        ));
    }
    let folds = (0..n_subjects)
        .flat_map(|s| {
            (0..n_blocks).map(move |test| Fold {
                target_subject: s,
                test_block: test,
                training_blocks: (1..=n_target_blocks).map(|k| (test + k) % n_blocks).collect(),
            })
        })
        .collect();
    Ok(CvPlan {
        n_subjects,
        n_blocks,
        n_target_blocks,
        folds,
    })
}

/// Information transfer rate in bits/min; 0 at or below chance.
pub fn itr(p: f64, n_f: usize, t_seconds: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return arg_err(format!("accuracy must be in [0, 1], got {p}"));
    }
    if n_f < 2 {
        return arg_err(format!("ITR needs at least 2 classes, got {n_f}"));
    }
    if !(t_seconds > 0.0) {
        return arg_err(format!("selection time must be positive, got {t_seconds}"));
    }
    let n = n_f as f64;
    if p <= 1.0 / n {
        return Ok(0.0);
    }
    let mut bits = n.log2();
    if p > 0.0 {
        bits += p * p.log2();
    }
    if p < 1.0 {
        bits += (1.0 - p) * ((1.0 - p) / (n - 1.0)).log2();
    }
    Ok((bits * 60.0 / t_seconds).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bank: FilterBankSpec,
    pub fs: f64,
    pub selection: SelectionConfig,
    /// Gaze time plus gaze shift, seconds.
    pub selection_time_s: f64,
    /// Worker threads for folds; 0 uses every core.
    #[serde(skip)]
    pub jobs: usize,
    pub export_features: bool,
}

impl EvalConfig {
    pub fn new(bank: FilterBankSpec, fs: f64, d_seconds: f64) -> Self {
        Self {
            bank,
            fs,
            selection: SelectionConfig::default(),
            selection_time_s: d_seconds + GAZE_SHIFT_S,
            jobs: 0,
            export_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub target_subject: usize,
    pub test_block: usize,
    pub training_blocks: Vec<usize>,
    pub predictions: Vec<usize>,
    pub truth: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldTiming {
    pub train_ms: f64,
    /// Classification of every trial of the test block.
    pub infer_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: usize,
    pub n_trials: u64,
    pub accuracy: f64,
    pub itr_bits_per_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub n_stimuli: usize,
    pub plan: CvPlan,
    pub folds: Vec<FoldResult>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub itr_bits_per_min: f64,
    pub per_subject: Vec<SubjectSummary>,
    pub n_failed_folds: usize,
    pub config: EvalConfig,
    /// Wall-clock measurements, kept out of the serialized report so that
    /// reruns serialize identically.
    #[serde(skip)]
    pub timings: Vec<FoldTiming>,
    #[serde(skip)]
    pub source_prep_ms: f64,
}

impl EvalReport {
    pub fn mean_subject_accuracy(&self) -> f64 {
        if self.per_subject.is_empty() {
            return 0.0;
        }
        self.per_subject.iter().map(|s| s.accuracy).sum::<f64>() / self.per_subject.len() as f64
    }

    /// Per-subject CSV summary with a trailing `all` row.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("algorithm,subject,n_trials,accuracy,itr_bits_per_min\n");
        for s in &self.per_subject {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.4}\n",
                self.algorithm, s.subject, s.n_trials, s.accuracy, s.itr_bits_per_min
            ));
        }
        let total: u64 = self.confusion.iter().flatten().sum();
        out.push_str(&format!(
            "{},all,{},{:.6},{:.4}\n",
            self.algorithm, total, self.accuracy, self.itr_bits_per_min
        ));
        out
    }

    /// Exported `r` vectors as `(true stimulus, 1, stimulus score, occurrence)`.
    /// `None` unless features were requested and every stimulus has the same count.
    pub fn feature_tensor(&self) -> Option<EpochTensor> {
        let n_f = self.n_stimuli;
        let mut grouped: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); n_f];
        for fold in &self.folds {
            let features = fold.features.as_ref()?;
            for (truth, r) in fold.truth.iter().zip(features) {
                grouped[*truth].push(r);
            }
        }
        let count = grouped.first()?.len();
        if count == 0 || grouped.iter().any(|g| g.len() != count) {
            return None;
        }
        let mut t = EpochTensor::zeros(n_f, 1, n_f, count);
        for (i, group) in grouped.iter().enumerate() {
            for (occ, r) in group.iter().enumerate() {
                for (k, v) in r.iter().enumerate() {
                    t.set(i, 0, k, occ, *v);
                }
            }
        }
        Some(t)
    }
}

fn run_indexed<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        Ok((0..n).map(f).collect())
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

struct Prepared {
    subbands: Vec<Vec<EpochTensor>>,
    sources: Vec<std::result::Result<SourceInstances, String>>,
}

fn run_fold(
    dataset: &[EpochTensor],
    prepared: &Prepared,
    bank: &FilterBank,
    fold: &Fold,
    algorithm: Algorithm,
    config: &EvalConfig,
) -> (FoldResult, FoldTiming) {
    let mut result = FoldResult {
        target_subject: fold.target_subject,
        test_block: fold.test_block,
        training_blocks: fold.training_blocks.clone(),
        predictions: Vec::new(),
        truth: Vec::new(),
        features: None,
        error: None,
    };
    let mut timing = FoldTiming {
        train_ms: 0.0,
        infer_ms: 0.0,
    };
    let outcome = (|| -> Result<()> {
        let sources: Vec<SourceInstances> = if algorithm.uses_sources() {
            prepared
                .sources
                .iter()
                .enumerate()
                .filter(|(s, _)| *s != fold.target_subject)
                .map(|(s, r)| {
                    r.clone()
                        .map_err(|e| Error::Degenerate(format!("source subject {s}: {e}")))
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let start = Instant::now();
        let target_bands = prepared.subbands[fold.target_subject]
            .iter()
            .map(|band| band.select_blocks(&fold.training_blocks))
            .collect::<Result<Vec<_>>>()?;
        let model = fit_from_subbands(algorithm, &target_bands, &sources, bank, &config.selection)?;
        timing.train_ms = elapsed_ms(start);

        let target = &dataset[fold.target_subject];
        let start = Instant::now();
        let mut features = Vec::new();
        for i in 0..target.n_stimuli() {
            let (pred, fv) = classify(&model, &target.trial(i, fold.test_block))?;
            result.predictions.push(pred);
            result.truth.push(i);
            if config.export_features {
                features.push(fv.r);
            }
        }
        timing.infer_ms = elapsed_ms(start);
        if config.export_features {
            result.features = Some(features);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!(
            "fold (subject {}, test block {}) failed: {e}",
            fold.target_subject,
            fold.test_block
        );
        result.predictions.clear();
        result.truth.clear();
        result.features = None;
        result.error = Some(e.to_string());
    }
    (result, timing)
}

/// Train and test every fold of `plan`; subject ids are positions in `dataset`.
pub fn run_eval(
    dataset: &[EpochTensor],
    plan: &CvPlan,
    algorithm: Algorithm,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if dataset.len() != plan.n_subjects {
        return dim_err(format!(
            "plan has {} subjects, dataset has {}",
            plan.n_subjects,
            dataset.len()
        ));
    }
    let [n_f, n_c, n_s, _] = dataset[0].dims();
    for (k, t) in dataset.iter().enumerate() {
        let [f, c, s, b] = t.dims();
        if (f, c, s) != (n_f, n_c, n_s) {
            return dim_err(format!(
                "subject {k} is {f}x{c}x{s}, subject 0 is {n_f}x{n_c}x{n_s} (stimuli x channels x samples)"
            ));
        }
        if b < plan.n_blocks {
            return dim_err(format!("subject {k} has {b} blocks, plan needs {}", plan.n_blocks));
        }
    }
    if n_f < 2 {
        return arg_err("evaluation needs at least 2 stimuli");
    }
    config.selection.validate()?;
    let bank = FilterBank::design(&config.bank, config.fs)?;

    let start = Instant::now();
    let subbands = run_indexed(config.jobs, dataset.len(), |k| {
        let blocks: Vec<usize> = (0..plan.n_blocks).collect();
        decompose_tensor(&dataset[k].select_blocks(&blocks)?, &bank)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let sources = if algorithm.uses_sources() {
        run_indexed(config.jobs, dataset.len(), |k| {
            source_instances(k, &subbands[k]).map_err(|e| e.to_string())
        })?
    } else {
        Vec::new()
    };
    let source_prep_ms = elapsed_ms(start);
    let prepared = Prepared { subbands, sources };

    let outcomes = run_indexed(config.jobs, plan.folds.len(), |k| {
        run_fold(dataset, &prepared, &bank, &plan.folds[k], algorithm, config)
    })?;
    let (folds, timings): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();

    let mut confusion = vec![vec![0u64; n_f]; n_f];
    let mut per_subject_counts = vec![(0u64, 0u64); plan.n_subjects];
    for fold in &folds {
        for (&t, &p) in fold.truth.iter().zip(&fold.predictions) {
            confusion[t][p] += 1;
            let entry = &mut per_subject_counts[fold.target_subject];
            entry.0 += u64::from(t == p);
            entry.1 += 1;
        }
    }
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..n_f).map(|i| confusion[i][i]).sum();
    let accuracy = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
    let per_subject = per_subject_counts
        .iter()
        .enumerate()
        .map(|(subject, &(ok, n))| {
            let acc = if n > 0 { ok as f64 / n as f64 } else { 0.0 };
            Ok(SubjectSummary {
                subject,
                n_trials: n,
                accuracy: acc,
                itr_bits_per_min: itr(acc, n_f, config.selection_time_s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        algorithm,
        n_stimuli: n_f,
        plan: plan.clone(),
        n_failed_folds: folds.iter().filter(|f| f.error.is_some()).count(),
        folds,
        confusion,
        accuracy,
        itr_bits_per_min: itr(accuracy, n_f, config.selection_time_s)?,
        per_subject,
        config: config.clone(),
        timings,
        source_prep_ms,
    })
}

/// Source similarities and selections behind one SS-iTRCA cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub target_subject: usize,
    pub training_blocks: Vec<usize>,
    pub subband: usize,
    pub stimulus: usize,
    /// Subject ids aligned with `raw` and `normalized`.
    pub source_subjects: Vec<usize>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Subject ids of the selected sources, ascending.
    pub selected: Vec<usize>,
    pub triggered: bool,
}

/// Selection outcome for every (target, sub-band, stimulus), training each
/// target on the first fold's blocks `1..=n_target_blocks`.
pub fn selection_records(
    dataset: &[EpochTensor],
    n_target_blocks: usize,
    config: &EvalConfig,
) -> Result<Vec<SelectionRecord>> {
    if dataset.len() < 2 {
        return arg_err("selection needs at least 2 subjects");
    }
    let n_blocks = dataset.iter().map(|t| t.n_blocks()).min().unwrap_or(0);
    let plan = build_cv_plan(dataset.len(), n_blocks, n_target_blocks)?;
    let bank = FilterBank::design(&config.bank, config.fs)?;
    let subbands = run_indexed(config.jobs, dataset.len(), |k| decompose_tensor(&dataset[k], &bank))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let sources = subbands
        .iter()
        .enumerate()
        .map(|(k, bands)| source_instances(k, bands))
        .collect::<Result<Vec<_>>>()?;
    let selection = SelectionConfig {
        enabled: true,
        ..config.selection
    };

    let per_target = run_indexed(config.jobs, dataset.len(), |target| -> Result<Vec<SelectionRecord>> {
        let fold = plan
            .folds
            .iter()
            .find(|f| f.target_subject == target)
            .expect("every subject has folds");
        let others: Vec<SourceInstances> = sources.iter().filter(|s| s.subject_id != target).cloned().collect();
        let ids: Vec<usize> = others.iter().map(|s| s.subject_id).collect();
        let bands = subbands[target]
            .iter()
            .map(|b| b.select_blocks(&fold.training_blocks))
            .collect::<Result<Vec<_>>>()?;
        let model = fit_from_subbands(Algorithm::SsItrca, &bands, &others, &bank, &selection)?;
        let mut out = Vec::new();
        for (m, cells) in model.per_subband.iter().enumerate() {
            for cell in cells {
                let report = cell
                    .similarity
                    .as_ref()
                    .ok_or_else(|| Error::Degenerate("SS-iTRCA cell without a similarity report".into()))?;
                out.push(SelectionRecord {
                    target_subject: target,
                    training_blocks: fold.training_blocks.clone(),
                    subband: m,
                    stimulus: cell.stimulus_index,
                    source_subjects: ids.clone(),
                    raw: report.raw.clone(),
                    normalized: report.normalized.clone(),
                    selected: report.selected.iter().map(|&n| ids[n]).collect(),
                    triggered: report.triggered,
                });
            }
        }
        Ok(out)
    })?;
    Ok(per_target
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}
