//! Batch front end: synthetic data generation, cross-validated evaluation,
//! parameter sweeps, selection reports and timing benchmarks.
//!
//! A data directory holds one `.eegt` tensor file per subject; subjects are
//! ordered by file name. Every command writes its outputs atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ssvep_xfer::dataio::{
    default_channel_names, read_tensor, select_named_channels, write_atomic, write_tensor, RunConfig, TensorHeader,
};
use ssvep_xfer::eval::{build_cv_plan, run_eval, selection_records, EvalConfig, EvalReport};
use ssvep_xfer::signal::{epoch_tensor, EpochWindow};
use ssvep_xfer::synth::{gen_dataset, SynthSpec};
use ssvep_xfer::tensor::EpochTensor;
use ssvep_xfer::transfer::Algorithm;

pub const TENSOR_EXTENSION: &str = "eegt";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FEATURES_FILE: &str = "features.eegt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub d: Option<f64>,
    pub nc: Option<usize>,
    pub ntb: Option<usize>,
    pub clb: Option<f64>,
    pub gamma: Option<f64>,
    pub algo: Option<Algorithm>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

/// Configuration file (or defaults) with `overrides` applied, validated.
pub fn resolve_config(overrides: &Overrides) -> Result<(RunConfig, usize)> {
    let mut cfg = match &overrides.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = overrides.d {
        cfg.d_seconds = v;
    }
    if let Some(v) = overrides.nc {
        cfg.n_channels = v;
    }
    if let Some(v) = overrides.ntb {
        cfg.n_target_blocks = v;
    }
    if let Some(v) = overrides.clb {
        cfg.c_lb = v;
    }
    if let Some(v) = overrides.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = overrides.algo {
        cfg.algorithm = v;
    }
    if let Some(v) = overrides.seed {
        cfg.seed = v;
    }
    cfg.validate().context("invalid run configuration")?;
    Ok((cfg, overrides.jobs.unwrap_or(0)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subject_id: u64,
    pub cluster: usize,
    pub snr_db: Option<f64>,
    pub sha256: String,
    /// Stimulus index of every trial in `(stimulus, block)` order.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub subjects: Vec<ManifestEntry>,
}

/// Generate the dataset described by the JSON spec at `spec_path` into `out_dir`.
pub fn cmd_synth(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<Manifest> {
    let text = fs::read(spec_path).with_context(|| format!("reading synth spec {}", spec_path.display()))?;
    let mut spec: SynthSpec =
        serde_json::from_slice(&text).with_context(|| format!("parsing synth spec {}", spec_path.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate().context("invalid synth spec")?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let data = gen_dataset(&spec)?;
    let mut subjects = Vec::with_capacity(data.len());
    for ((tensor, truth), subject) in data.iter().zip(&spec.subjects) {
        let file = format!("subject_{:03}.{TENSOR_EXTENSION}", subject.id);
        let header = TensorHeader {
            frequencies: spec.frequencies.clone(),
            phases: spec.phases.clone(),
            channel_names: default_channel_names(spec.n_channels),
            onset_s: Some(0.0),
            ..TensorHeader::for_tensor(tensor, spec.fs, format!("S{:03}", subject.id))
        };
        let path = out_dir.join(&file);
        write_tensor(&path, tensor, &header).with_context(|| format!("writing {}", path.display()))?;
        subjects.push(ManifestEntry {
            sha256: sha256_hex(&fs::read(&path)?),
            file,
            subject_id: subject.id,
            cluster: subject.cluster,
            snr_db: subject.snr_db,
            labels: truth.labels.clone(),
        });
    }
    let manifest = Manifest { spec, subjects };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    log::info!("wrote {} subjects to {}", manifest.subjects.len(), out_dir.display());
    Ok(manifest)
}

/// Epoched subjects of a data directory plus their shared sampling rate.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub files: Vec<PathBuf>,
    pub subjects: Vec<EpochTensor>,
    pub fs: f64,
}

pub fn tensor_files(data_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(data_dir)
        .with_context(|| format!("reading data directory {}", data_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == TENSOR_EXTENSION) && p.file_name() != Some(FEATURES_FILE.as_ref())
        })
        .collect();
    files.sort();
    ensure!(
        !files.is_empty(),
        "no .{TENSOR_EXTENSION} files in {}",
        data_dir.display()
    );
    Ok(files)
}

/// Read, channel-select and epoch every subject under `data_dir`.
pub fn load_dataset(data_dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let files = tensor_files(data_dir)?;
    let mut subjects = Vec::with_capacity(files.len());
    let mut fs_common: Option<f64> = None;
    for path in &files {
        let (tensor, header) = read_tensor(path).with_context(|| format!("reading {}", path.display()))?;
        let (tensor, header) = select_named_channels(&tensor, &header, &cfg.channel_order, cfg.n_channels)
            .with_context(|| format!("selecting channels of {}", path.display()))?;
        match fs_common {
            None => fs_common = Some(header.fs),
            Some(f) => ensure!(
                f == header.fs,
                "{} is sampled at {} Hz, earlier subjects at {f} Hz",
                path.display(),
                header.fs
            ),
        }
        let window = EpochWindow {
            onset_s: cfg.resolve_onset(header.onset_s),
            length_s: cfg.d_seconds,
            fs: header.fs,
        };
        let needed = window.start_sample() + window.n_samples();
        ensure!(
            needed <= tensor.n_samples(),
            "{}: a {} s window starting {} s into the trial needs {needed} samples, trials have {}",
            path.display(),
            cfg.d_seconds,
            window.onset_s,
            tensor.n_samples()
        );
        subjects.push(epoch_tensor(&tensor, &window).with_context(|| format!("epoching {}", path.display()))?);
    }
    let first = subjects[0].dims();
    for (path, t) in files.iter().zip(&subjects) {
        let d = t.dims();
        ensure!(
            d[..3] == first[..3],
            "{} has {}x{}x{} (stimuli x channels x samples), {} has {}x{}x{}",
            path.display(),
            d[0],
            d[1],
            d[2],
            files[0].display(),
            first[0],
            first[1],
            first[2]
        );
    }
    Ok(Dataset {
        files,
        subjects,
        fs: fs_common.expect("at least one file"),
    })
}

pub fn eval_config(cfg: &RunConfig, fs: f64, jobs: usize) -> Result<EvalConfig> {
    let mut ec = EvalConfig::new(cfg.filter_bank(fs)?, fs, cfg.d_seconds);
    ec.selection = cfg.selection();
    ec.jobs = jobs;
    ec.export_features = cfg.export_features;
    Ok(ec)
}

fn evaluate(data: &Dataset, cfg: &RunConfig, jobs: usize) -> Result<EvalReport> {
    let n_blocks = data.subjects.iter().map(|t| t.n_blocks()).min().unwrap_or(0);
    let plan = build_cv_plan(data.subjects.len(), n_blocks, cfg.n_target_blocks)?;
    let report = run_eval(&data.subjects, &plan, cfg.algorithm, &eval_config(cfg, data.fs, jobs)?)?;
    if report.n_failed_folds > 0 {
        log::warn!("{} of {} folds failed", report.n_failed_folds, report.folds.len());
    }
    Ok(report)
}

/// Evaluate the configured algorithm; writes `report.json` and `summary.csv`
/// (and `features.eegt` when feature export is on) into `out_dir`.
pub fn cmd_eval(data_dir: &Path, cfg: &RunConfig, jobs: usize, out_dir: &Path) -> Result<EvalReport> {
    let data = load_dataset(data_dir, cfg)?;
    let report = evaluate(&data, cfg, jobs)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    write_atomic(&out_dir.join(SUMMARY_FILE), report.summary_csv().as_bytes())?;
    if cfg.export_features {
        match report.feature_tensor() {
            Some(t) => {
                let mut header = TensorHeader::for_tensor(&t, data.fs, "features");
                header.channel_names = vec!["r".into()];
                write_tensor(&out_dir.join(FEATURES_FILE), &t, &header)?;
            }
            None => log::warn!("features not exported: folds failed or stimuli have unequal trial counts"),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    D,
    NChannels,
    NTargetBlocks,
    CLb,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::D => "d",
            SweepAxis::NChannels => "nc",
            SweepAxis::NTargetBlocks => "ntb",
            SweepAxis::CLb => "clb",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            ensure!(
                v >= 1.0 && v.fract() == 0.0,
                "{} must be a positive integer, got {v}",
                self.name()
            );
            Ok(v as usize)
        };
        match self {
            SweepAxis::D => cfg.d_seconds = value,
            SweepAxis::NChannels => cfg.n_channels = as_count(value)?,
            SweepAxis::NTargetBlocks => cfg.n_target_blocks = as_count(value)?,
            SweepAxis::CLb => cfg.c_lb = value,
        }
        Ok(())
    }

    fn changes_data(self) -> bool {
        matches!(self, SweepAxis::D | SweepAxis::NChannels)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "d" => SweepAxis::D,
            "nc" | "n_channels" => SweepAxis::NChannels,
            "ntb" | "n_target_blocks" => SweepAxis::NTargetBlocks,
            "clb" | "c_lb" => SweepAxis::CLb,
            other => bail!("unknown sweep axis {other:?}; expected d, nc, ntb or clb"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub algorithm: Algorithm,
    pub accuracy: f64,
    pub itr_bits_per_min: f64,
    pub n_failed_folds: usize,
}

/// One evaluation per (value, algorithm) with everything else fixed; writes CSV to `out`.
pub fn cmd_sweep(
    data_dir: &Path,
    cfg: &RunConfig,
    jobs: usize,
    axis: SweepAxis,
    values: &[f64],
    algorithms: &[Algorithm],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    ensure!(!values.is_empty(), "sweep needs at least one value");
    ensure!(!algorithms.is_empty(), "sweep needs at least one algorithm");
    let mut rows = Vec::with_capacity(values.len() * algorithms.len());
    let mut shared: Option<Dataset> = None;
    for &value in values {
        let mut point = cfg.clone();
        axis.apply(&mut point, value)?;
        point.validate().with_context(|| format!("{} = {value}", axis.name()))?;
        let data = if axis.changes_data() {
            load_dataset(data_dir, &point)?
        } else {
            match &shared {
                Some(d) => d.clone(),
                None => shared.insert(load_dataset(data_dir, &point)?).clone(),
            }
        };
        for &algorithm in algorithms {
            let mut run = point.clone();
            run.algorithm = algorithm;
            let report = evaluate(&data, &run, jobs)?;
            log::info!(
                "{} = {value}, {algorithm}: accuracy {:.4}",
                axis.name(),
                report.accuracy
            );
            rows.push(SweepRow {
                value,
                algorithm,
                accuracy: report.accuracy,
                itr_bits_per_min: report.itr_bits_per_min,
                n_failed_folds: report.n_failed_folds,
            });
        }
    }
    let mut csv = format!("{},algorithm,accuracy,itr_bits_per_min,n_failed_folds\n", axis.name());
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.4},{}",
            r.value, r.algorithm, r.accuracy, r.itr_bits_per_min, r.n_failed_folds
        );
    }
    write_atomic(out, csv.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    Ok(rows)
}

/// Per (target, sub-band, stimulus) similarities and selections as JSON lines.
pub fn cmd_select_report(data_dir: &Path, cfg: &RunConfig, jobs: usize, out: &Path) -> Result<usize> {
    let data = load_dataset(data_dir, cfg)?;
    let records = selection_records(&data.subjects, cfg.n_target_blocks, &eval_config(cfg, data.fs, jobs)?)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(out, text.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    Ok(records.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, sd: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub algorithm: Algorithm,
    /// Timed folds; the first fold of every repeat is a warm-up and excluded.
    pub n_folds: usize,
    pub trials_per_test_block: usize,
    pub train_ms: MeanSd,
    /// Time to classify one whole test block.
    pub infer_ms: MeanSd,
    /// Shared per-run preprocessing (filter bank, source TRCs), once per repeat.
    pub source_prep_ms: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub jobs: usize,
    pub entries: Vec<BenchEntry>,
}

/// Wall-clock training and inference time per fold for each algorithm.
pub fn cmd_bench(
    data_dir: &Path,
    cfg: &RunConfig,
    jobs: usize,
    algorithms: &[Algorithm],
    repeats: usize,
    out: &Path,
) -> Result<BenchReport> {
    ensure!(repeats >= 1, "repeats must be >= 1");
    let data = load_dataset(data_dir, cfg)?;
    let mut entries = Vec::new();
    for &algorithm in algorithms {
        let mut run = cfg.clone();
        run.algorithm = algorithm;
        let (mut train, mut infer, mut prep) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..repeats {
            let report = evaluate(&data, &run, jobs)?;
            ensure!(
                report.n_failed_folds == 0,
                "{algorithm}: {} folds failed",
                report.n_failed_folds
            );
            for t in report.timings.iter().skip(1) {
                train.push(t.train_ms);
                infer.push(t.infer_ms);
            }
            prep.push(report.source_prep_ms);
        }
        entries.push(BenchEntry {
            algorithm,
            n_folds: train.len(),
            trials_per_test_block: data.subjects[0].n_stimuli(),
            train_ms: MeanSd::of(&train),
            infer_ms: MeanSd::of(&infer),
            source_prep_ms: MeanSd::of(&prep),
        });
    }
    let report = BenchReport { repeats, jobs, entries };
    write_json(out, &report)?;
    Ok(report)
}
