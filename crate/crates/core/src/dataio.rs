//! On-disk formats: epoch tensors, trained-model containers and run configuration.
//!
//! Tensor file (`.eegt`), little-endian:
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 4 | magic `EEGT` |
//! | 4 | 4 | `u32` format version, currently 1 |
//! | 8 | 4 | `u32` header length `L` in bytes |
//! | 12 | `L` | UTF-8 JSON [`TensorHeader`] |
//! | 12+L | `4·N_f·N_c·N_s·N_b` | `f32` samples in (stimulus, channel, sample, block) order |
//!
//! Model container (`.eegm`), little-endian:
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 4 | magic `EEGM` |
//! | 4 | 4 | `u32` format version, currently 1 |
//! | 8 | 8 | `u64` payload length `P` |
//! | 16 | 32 | SHA-256 of the payload |
//! | 48 | `P` | UTF-8 JSON [`TrainedModel`] |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg_err, Error, Result};
use crate::selection::{SelectionConfig, TriggerMode};
use crate::signal::{BandpassSpec, FilterBankSpec, GAZE_SHIFT_S, LATENCY_S};
use crate::tensor::EpochTensor;
use crate::transfer::{Algorithm, TrainedModel};

pub const TENSOR_MAGIC: [u8; 4] = *b"EEGT";
pub const TENSOR_VERSION: u32 = 1;
pub const MODEL_MAGIC: [u8; 4] = *b"EEGM";
pub const MODEL_VERSION: u32 = 1;

/// Occipital/parietal montage; a run uses its first `n_channels` entries.
pub const DEFAULT_CHANNELS: [&str; 9] = ["Pz", "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDims {
    pub n_stimuli: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dims: TensorDims,
    pub fs: f64,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub channel_names: Vec<String>,
    pub subject_id: String,
    /// Seconds from sample 0 to the start of the analysis window. Absent means
    /// sample 0 is the cue onset, so the window starts after the cue and latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_s: Option<f64>,
}

impl TensorHeader {
    pub fn for_tensor(tensor: &EpochTensor, fs: f64, subject_id: impl Into<String>) -> Self {
        let [n_f, n_c, n_s, n_b] = tensor.dims();
        Self {
            dims: TensorDims {
                n_stimuli: n_f,
                n_channels: n_c,
                n_samples: n_s,
                n_blocks: n_b,
            },
            fs,
            frequencies: Vec::new(),
            phases: Vec::new(),
            channel_names: default_channel_names(n_c),
            subject_id: subject_id.into(),
            onset_s: None,
        }
    }

    fn dims_array(&self) -> [usize; 4] {
        let d = self.dims;
        [d.n_stimuli, d.n_channels, d.n_samples, d.n_blocks]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims_array().contains(&0) {
            return Err(Error::Format(format!(
                "tensor dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Format(format!(
                "sampling rate must be positive, got {}",
                self.fs
            )));
        }
        let n_f = self.dims.n_stimuli;
        if !self.frequencies.is_empty() && self.frequencies.len() != n_f {
            return Err(Error::Format(format!(
                "{} frequencies for {n_f} stimuli",
                self.frequencies.len()
            )));
        }
        if !self.phases.is_empty() && self.phases.len() != n_f {
            return Err(Error::Format(format!("{} phases for {n_f} stimuli", self.phases.len())));
        }
        if self.channel_names.len() != self.dims.n_channels {
            return Err(Error::Format(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.dims.n_channels
            )));
        }
        Ok(())
    }
}

/// Standard names for the first `n` channels, numbered beyond the montage.
pub fn default_channel_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| {
            DEFAULT_CHANNELS
                .get(c)
                .map_or_else(|| format!("Ch{}", c + 1), |s| s.to_string())
        })
        .collect()
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn encode_tensor(tensor: &EpochTensor, header: &TensorHeader) -> Result<Vec<u8>> {
    header.validate()?;
    if header.dims_array() != tensor.dims() {
        return Err(Error::Dimension(format!(
            "header dims {:?} do not match tensor {:?}",
            header.dims_array(),
            tensor.dims()
        )));
    }
    if let Some(pos) = tensor.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tensor value at flat index {pos} is not finite"
        )));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * tensor.as_slice().len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in tensor.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(EpochTensor, TensorHeader)> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the 12-byte preamble",
            bytes.len()
        )));
    }
    if bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"EEGT\"", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: TENSOR_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(Error::Format(format!(
            "header declares {header_len} bytes but only {} follow",
            body.len()
        )));
    }
    let header: TensorHeader = serde_json::from_slice(&body[..header_len])?;
    header.validate()?;
    let dims = header.dims_array();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("tensor dimensions {dims:?} overflow")))?;
    let payload = &body[header_len..];
    if payload.len() != count {
        return Err(Error::PayloadSize {
            expected: count,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((EpochTensor::from_vec(dims, data)?, header))
}

pub fn write_tensor(path: &Path, tensor: &EpochTensor, header: &TensorHeader) -> Result<()> {
    write_atomic(path, &encode_tensor(tensor, header)?)
}

/// Reads a tensor file exactly as stored.
pub fn read_tensor(path: &Path) -> Result<(EpochTensor, TensorHeader)> {
    decode_tensor(&fs::read(path)?)
}

/// Keeps the first `n_channels` names of `order`, in that order.
pub fn select_named_channels(
    tensor: &EpochTensor,
    header: &TensorHeader,
    order: &[String],
    n_channels: usize,
) -> Result<(EpochTensor, TensorHeader)> {
    if n_channels == 0 || n_channels > order.len() {
        return arg_err(format!("n_channels must be in 1..={}, got {n_channels}", order.len()));
    }
    let idx = order[..n_channels]
        .iter()
        .map(|name| {
            header
                .channel_names
                .iter()
                .position(|c| c.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingChannel(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sub = tensor.select_channels(&idx)?;
    let mut h = header.clone();
    h.dims.n_channels = n_channels;
    h.channel_names = idx.iter().map(|&i| header.channel_names[i].clone()).collect();
    Ok((sub, h))
}

/// Reads a tensor and applies the configuration's channel selection.
pub fn read_tensor_for(path: &Path, config: &RunConfig) -> Result<(EpochTensor, TensorHeader)> {
    let (t, h) = read_tensor(path)?;
    select_named_channels(&t, &h, &config.channel_order, config.n_channels)
}

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(model)?;
    let digest = Sha256::digest(&payload);
    let mut out = Vec::with_capacity(48 + payload.len());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(digest.as_slice());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < 48 {
        return Err(Error::Format(format!(
            "model file is {} bytes, shorter than the 48-byte header",
            bytes.len()
        )));
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"EEGM\"", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[48..];
    if payload.len() as u64 != declared {
        return Err(Error::Checksum(format!(
            "payload is {} bytes, header declares {declared}",
            payload.len()
        )));
    }
    if Sha256::digest(payload).as_slice() != &bytes[16..48] {
        return Err(Error::Checksum("payload digest does not match".into()));
    }
    Ok(serde_json::from_slice(payload)?)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    decode_model(&fs::read(path)?)
}

/// Everything that determines a run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Data length used for classification, seconds.
    pub d_seconds: f64,
    pub n_channels: usize,
    pub channel_order: Vec<String>,
    pub n_target_blocks: usize,
    pub n_subbands: usize,
    /// Explicit `[low, high]` Hz per sub-band; overrides `n_subbands`.
    pub band_edges: Option<Vec<[f64; 2]>>,
    pub band_ceiling_hz: Option<f64>,
    pub filter_order: usize,
    pub ripple_db: f64,
    pub zero_phase: bool,
    pub gamma: f64,
    pub c_lb: f64,
    pub trigger: TriggerMode,
    pub share_selection_across_subbands: bool,
    /// Epoch onset after the cue. `None` takes the tensor header's value or the
    /// visual latency plus gaze shift.
    pub onset_s: Option<f64>,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub export_features: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_seconds: 1.0,
            n_channels: 9,
            channel_order: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            n_target_blocks: 3,
            n_subbands: 3,
            band_edges: None,
            band_ceiling_hz: None,
            filter_order: 4,
            ripple_db: 0.5,
            zero_phase: true,
            gamma: 0.5,
            c_lb: 0.9,
            trigger: TriggerMode::Absolute,
            share_selection_across_subbands: false,
            onset_s: None,
            algorithm: Algorithm::SsItrca,
            seed: 0,
            export_features: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_seconds > 0.0) {
            return arg_err(format!("d_seconds must be positive, got {}", self.d_seconds));
        }
        if self.n_channels == 0 || self.n_channels > self.channel_order.len() {
            return arg_err(format!(
                "n_channels must be in 1..={}, got {}",
                self.channel_order.len(),
                self.n_channels
            ));
        }
        if self.n_target_blocks < 2 {
            return arg_err(format!("n_target_blocks must be >= 2, got {}", self.n_target_blocks));
        }
        if self.band_edges.as_ref().map_or(self.n_subbands == 0, |e| e.is_empty()) {
            return arg_err("at least one sub-band is required");
        }
        if self.filter_order == 0 || !(self.ripple_db > 0.0) {
            return arg_err("filter order and ripple must be positive");
        }
        self.selection().validate()
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            gamma: self.gamma,
            c_lb: self.c_lb,
            enabled: self.algorithm == Algorithm::SsItrca,
            trigger: self.trigger,
            share_across_subbands: self.share_selection_across_subbands,
        }
    }

    pub fn filter_bank(&self, fs: f64) -> Result<FilterBankSpec> {
        let mut spec = match &self.band_edges {
            Some(edges) => {
                FilterBankSpec::with_bands(edges.iter().map(|&[lo, hi]| BandpassSpec::new(lo, hi)).collect())
            }
            None => FilterBankSpec::m3(self.n_subbands, fs, self.band_ceiling_hz)?,
        };
        spec.set_order(self.filter_order, self.ripple_db);
        spec.zero_phase = self.zero_phase;
        spec.validate(fs)?;
        Ok(spec)
    }

    /// Epoch onset for data whose header carries `header_onset`.
    pub fn resolve_onset(&self, header_onset: Option<f64>) -> f64 {
        self.onset_s.or(header_onset).unwrap_or(LATENCY_S + GAZE_SHIFT_S)
    }
}
