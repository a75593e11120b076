//! Sampling-rate-aware multichannel signals and the DSP primitives used by
//! preprocessing: zero-phase IIR bandpass filtering, rational resampling, and
//! per-trial z-scoring.

mod filter;
mod resample;

pub(crate) use filter::sosfilt_causal;
pub use filter::{design_butterworth_bandpass, filtfilt, Biquad, FilterKind, IirFilterSpec};
pub use resample::{rational_ratio, resample_rational};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// A uniformly sampled multichannel time series, time-major
/// `[n_samples x n_channels]`. Samples are finite f64 and `fs > 0`; both are
/// enforced at construction so downstream code can rely on them.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    samples: Array2<f64>,
    fs: f64,
    channel_labels: Option<Vec<String>>,
}

impl MultichannelSignal {
    pub fn new(samples: Array2<f64>, fs: f64) -> Result<Self> {
        if samples.nrows() < 1 || samples.ncols() < 1 {
            return Err(Error::ShapeMismatch(format!(
                "signal must have at least one sample and one channel, got {}x{}",
                samples.nrows(),
                samples.ncols()
            )));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some((t, c)) = samples
            .indexed_iter()
            .find_map(|(idx, v)| (!v.is_finite()).then_some(idx))
        {
            return Err(Error::CorruptDataset(format!(
                "non-finite sample at t={t}, channel={c}"
            )));
        }
        Ok(Self {
            samples,
            fs,
            channel_labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} channel labels for {} channels",
                labels.len(),
                self.n_channels()
            )));
        }
        self.channel_labels = Some(labels);
        Ok(self)
    }

    /// Single-channel signal from a plain sample vector.
    pub fn single_channel(samples: Vec<f64>, fs: f64) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((n, 1), samples)
            .expect("vector length matches (n, 1) shape");
        Self::new(arr, fs)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.column(c)
    }

    pub fn channel_labels(&self) -> Option<&[String]> {
        self.channel_labels.as_deref()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    /// Rebuild with the same labels but new samples/rate, revalidating.
    fn derive(&self, samples: Array2<f64>, fs: f64) -> Result<Self> {
        let mut out = Self::new(samples, fs)?;
        out.channel_labels = self.channel_labels.clone();
        Ok(out)
    }
}

/// Z-score every channel independently: mean 0, sample standard deviation 1
/// (ddof = 1). Constant channels are an error rather than silently zeroed.
pub fn zscore_per_trial(signal: &MultichannelSignal) -> Result<MultichannelSignal> {
    let n = signal.n_samples();
    if n < 2 {
        return Err(Error::ZeroVariance(
            "z-scoring needs at least 2 samples".into(),
        ));
    }
    let mut out = signal.samples().clone();
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = (ss / (n - 1) as f64).sqrt();
        // Degeneracy threshold rather than an exact-zero test: a constant
        // signal that went through a filter carries ~1e-13 numerical residue,
        // and normalizing that residue to unit variance would emit garbage.
        if std <= 1e-10 * (1.0 + mean.abs()) {
            return Err(Error::ZeroVariance(format!(
                "channel {c} has (near-)zero sample variance: std={std:e}"
            )));
        }
        col.mapv_inplace(|v| (v - mean) / std);
    }
    signal.derive(out, signal.fs())
}

/// The preprocessing chain shared by EEG and envelopes: zero-phase Butterworth
/// bandpass at the signal's rate, rational resampling to `target_fs`, then
/// per-trial z-scoring.
pub fn preprocess_signal(
    signal: &MultichannelSignal,
    low_hz: f64,
    high_hz: f64,
    order: usize,
    target_fs: f64,
) -> Result<MultichannelSignal> {
    let filter = design_butterworth_bandpass(order, low_hz, high_hz, signal.fs())?;
    let filtered = filtfilt(&filter, signal)?;
    let (up, down) = rational_ratio(target_fs, signal.fs())?;
    let resampled = resample_rational(&filtered, up, down)?;
    zscore_per_trial(&resampled)
}
