use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::numerics::Matrix;

/// Segmented trials of one subject, indexed `(stimulus, channel, sample, block)`
/// and stored row-major in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTensor {
    n_stimuli: usize,
    n_channels: usize,
    n_samples: usize,
    n_blocks: usize,
    data: Vec<f64>,
}

impl EpochTensor {
    pub fn zeros(n_stimuli: usize, n_channels: usize, n_samples: usize, n_blocks: usize) -> Self {
        Self {
            n_stimuli,
            n_channels,
            n_samples,
            n_blocks,
            data: vec![0.0; n_stimuli * n_channels * n_samples * n_blocks],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.contains(&0) {
            return dim_err(format!("tensor dims must be positive, got {dims:?}"));
        }
        if data.len() != expected {
            return dim_err(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            n_stimuli: dims[0],
            n_channels: dims[1],
            n_samples: dims[2],
            n_blocks: dims[3],
            data,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n_stimuli, self.n_channels, self.n_samples, self.n_blocks]
    }

    pub fn n_stimuli(&self) -> usize {
        self.n_stimuli
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn index(&self, stimulus: usize, channel: usize, sample: usize, block: usize) -> usize {
        ((stimulus * self.n_channels + channel) * self.n_samples + sample) * self.n_blocks + block
    }

    pub fn get(&self, stimulus: usize, channel: usize, sample: usize, block: usize) -> f64 {
        self.data[self.index(stimulus, channel, sample, block)]
    }

    pub fn set(&mut self, stimulus: usize, channel: usize, sample: usize, block: usize, v: f64) {
        let i = self.index(stimulus, channel, sample, block);
        self.data[i] = v;
    }

    /// `channels × samples` trial for one stimulus and block.
    pub fn trial(&self, stimulus: usize, block: usize) -> Matrix {
        Matrix::from_fn(self.n_channels, self.n_samples, |c, t| self.get(stimulus, c, t, block))
    }

    pub fn set_trial(&mut self, stimulus: usize, block: usize, trial: &Matrix) -> Result<()> {
        if trial.shape() != (self.n_channels, self.n_samples) {
            return dim_err(format!(
                "trial is {:?}, tensor expects ({}, {})",
                trial.shape(),
                self.n_channels,
                self.n_samples
            ));
        }
        for c in 0..self.n_channels {
            for t in 0..self.n_samples {
                self.set(stimulus, c, t, block, trial[(c, t)]);
            }
        }
        Ok(())
    }

    /// All blocks of one stimulus, in block order.
    pub fn stimulus_trials(&self, stimulus: usize) -> Vec<Matrix> {
        (0..self.n_blocks).map(|b| self.trial(stimulus, b)).collect()
    }

    /// New tensor holding only `blocks`, in the given order.
    pub fn select_blocks(&self, blocks: &[usize]) -> Result<Self> {
        if blocks.is_empty() {
            return dim_err("block selection is empty");
        }
        if let Some(&bad) = blocks.iter().find(|&&b| b >= self.n_blocks) {
            return dim_err(format!("block {bad} out of range ({} blocks)", self.n_blocks));
        }
        let mut out = Self::zeros(self.n_stimuli, self.n_channels, self.n_samples, blocks.len());
        for i in 0..self.n_stimuli {
            for c in 0..self.n_channels {
                for t in 0..self.n_samples {
                    for (nb, &b) in blocks.iter().enumerate() {
                        out.set(i, c, t, nb, self.get(i, c, t, b));
                    }
                }
            }
        }
        Ok(out)
    }

    /// New tensor holding only `channels`, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() {
            return dim_err("channel selection is empty");
        }
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.n_channels) {
            return dim_err(format!("channel {bad} out of range ({} channels)", self.n_channels));
        }
        let mut out = Self::zeros(self.n_stimuli, channels.len(), self.n_samples, self.n_blocks);
        for i in 0..self.n_stimuli {
            for (nc, &c) in channels.iter().enumerate() {
                for t in 0..self.n_samples {
                    for b in 0..self.n_blocks {
                        out.set(i, nc, t, b, self.get(i, c, t, b));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Apply `f` to every trial, producing a tensor of the same stimulus/block layout.
    pub fn map_trials<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Matrix) -> Result<Matrix>,
    {
        let mut out: Option<Self> = None;
        for i in 0..self.n_stimuli {
            for b in 0..self.n_blocks {
                let mapped = f(&self.trial(i, b))?;
                let dst = out
                    .get_or_insert_with(|| Self::zeros(self.n_stimuli, mapped.nrows(), mapped.ncols(), self.n_blocks));
                dst.set_trial(i, b, &mapped)?;
            }
        }
        Ok(out.expect("tensor dims are positive"))
    }
}
