//! Broadband speech-envelope extraction: a gammatone filterbank splits the
//! audio into auditory subbands, each subband is compressed by a powerlaw,
//! and the compressed subbands are summed into a single envelope.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::{self, Biquad, MultichannelSignal};

/// Gammatone filterbank description: `n_bands` ERB-spaced center frequencies
/// between `f_low` and `f_high` at sampling rate `fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneBankSpec {
    pub n_bands: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub filter_order: usize,
    pub fs: f64,
}

impl GammatoneBankSpec {
    pub fn new(n_bands: usize, f_low: f64, f_high: f64, fs: f64) -> Result<Self> {
        let spec = Self {
            n_bands,
            f_low,
            f_high,
            filter_order: 4,
            fs,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Conventional speech bank: 28 filters, 50 Hz to 5 kHz, order 4.
    pub fn default_speech(fs: f64) -> Result<Self> {
        Self::new(28, 50.0, 5000.0, fs)
    }

    pub fn with_order(mut self, filter_order: usize) -> Result<Self> {
        if filter_order < 1 {
            return Err(Error::InvalidBand(format!(
                "gammatone order must be >= 1, got {filter_order}"
            )));
        }
        self.filter_order = filter_order;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bands < 1 {
            return Err(Error::InvalidBand("n_bands must be >= 1".into()));
        }
        if !(0.0 < self.f_low && self.f_low < self.f_high && self.f_high < self.fs / 2.0) {
            return Err(Error::InvalidBand(format!(
                "need 0 < f_low < f_high < fs/2, got f_low={}, f_high={}, fs={}",
                self.f_low, self.f_high, self.fs
            )));
        }
        if self.filter_order < 1 {
            return Err(Error::InvalidBand("gammatone order must be >= 1".into()));
        }
        Ok(())
    }

    /// ERB-rate-spaced center frequencies, endpoints inclusive.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let lo = erb_rate(self.f_low);
        let hi = erb_rate(self.f_high);
        if self.n_bands == 1 {
            return vec![erb_rate_inv(0.5 * (lo + hi))];
        }
        (0..self.n_bands)
            .map(|i| erb_rate_inv(lo + (hi - lo) * i as f64 / (self.n_bands - 1) as f64))
            .collect()
    }
}

/// ERB-rate scale (Glasberg & Moore): ERB count below frequency `f` in Hz.
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_inv(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth of the auditory filter centered at `f`.
fn erb_bandwidth(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// A single-channel envelope plus the provenance of how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    signal: MultichannelSignal,
    pub exponent: Option<f64>,
    pub bank: Option<GammatoneBankSpec>,
}

impl Envelope {
    pub fn from_signal(signal: MultichannelSignal) -> Result<Self> {
        if signal.n_channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "an envelope is single-channel, got {} channels",
                signal.n_channels()
            )));
        }
        Ok(Self {
            signal,
            exponent: None,
            bank: None,
        })
    }

    pub fn from_samples(samples: Vec<f64>, fs: f64) -> Result<Self> {
        Self::from_signal(MultichannelSignal::single_channel(samples, fs)?)
    }

    pub fn as_signal(&self) -> &MultichannelSignal {
        &self.signal
    }

    pub fn samples(&self) -> &[f64] {
        self.signal
            .samples()
            .as_slice()
            .expect("owned (n, 1) array is contiguous")
    }

    pub fn fs(&self) -> f64 {
        self.signal.fs()
    }

    pub fn len(&self) -> usize {
        self.signal.n_samples()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn with_provenance(mut self, exponent: Option<f64>, bank: Option<GammatoneBankSpec>) -> Self {
        self.exponent = exponent;
        self.bank = bank;
        self
    }
}

/// Split single-channel audio into gammatone subbands, one output channel per
/// center frequency.
pub fn gammatone_filterbank(
    audio: &MultichannelSignal,
    spec: &GammatoneBankSpec,
) -> Result<MultichannelSignal> {
    if audio.n_channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "gammatone filterbank expects single-channel audio, got {} channels",
            audio.n_channels()
        )));
    }
    spec.validate()?;
    if (spec.fs - audio.fs()).abs() > 1e-9 * spec.fs {
        return Err(Error::InvalidBand(format!(
            "bank designed for fs={} applied to audio at fs={}",
            spec.fs,
            audio.fs()
        )));
    }

    let x: Vec<f64> = audio.channel(0).to_vec();
    let centers = spec.center_frequencies();
    let bands: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&cf| {
            let stages = gammatone_stages(cf, spec.fs, spec.filter_order);
            signal::sosfilt_causal(&stages, &x)
        })
        .collect();

    let mut out = ndarray::Array2::zeros((x.len(), centers.len()));
    for (band, col) in bands.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            out[(t, band)] = *v;
        }
    }
    MultichannelSignal::new(out, audio.fs())
}

/// Digital gammatone as a cascade of two-pole sections with unit gain at the
/// center frequency. Order 4 uses the standard Patterson-Holdsworth
/// decomposition with its four first-order zeros; other orders fall back to
/// the all-pole variant.
fn gammatone_stages(cf: f64, fs: f64, order: usize) -> Vec<Biquad> {
    let t = 1.0 / fs;
    let b = 1.019 * 2.0 * std::f64::consts::PI * erb_bandwidth(cf);
    let theta = 2.0 * std::f64::consts::PI * cf * t;
    let decay = (-b * t).exp();
    let a1 = -2.0 * theta.cos() * decay;
    let a2 = decay * decay;

    let zeros: Vec<f64> = if order == 4 {
        let root_plus = (3.0 + 2.0_f64.powf(1.5)).sqrt();
        let root_minus = (3.0 - 2.0_f64.powf(1.5)).sqrt();
        [root_plus, -root_plus, root_minus, -root_minus]
            .iter()
            .map(|&r| -t * decay * (theta.cos() + r * theta.sin()))
            .collect()
    } else {
        vec![0.0; order]
    };

    zeros
        .into_iter()
        .map(|b1| {
            let mut stage = Biquad {
                b: [t, b1, 0.0],
                a: [1.0, a1, a2],
            };
            let gain = biquad_magnitude(&stage, cf, fs);
            stage.b[0] /= gain;
            stage.b[1] /= gain;
            stage
        })
        .collect()
}

fn biquad_magnitude(s: &Biquad, f_hz: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f_hz / fs;
    let eval = |c: &[f64; 3]| {
        let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
        let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
        (re * re + im * im).sqrt()
    };
    eval(&s.b) / eval(&s.a)
}

/// Rectify each subband, compress it with `|x|^exponent`, and sum the bands
/// into a single nonnegative envelope.
pub fn powerlaw_envelope(subbands: &MultichannelSignal, exponent: f64) -> Result<Envelope> {
    if !(exponent > 0.0) {
        return Err(Error::InvalidExponent(format!(
            "powerlaw exponent must be positive, got {exponent}"
        )));
    }
    let n = subbands.n_samples();
    let mut env = vec![0.0; n];
    for col in subbands.samples().columns() {
        for (t, v) in col.iter().enumerate() {
            env[t] += v.abs().powf(exponent);
        }
    }
    Ok(Envelope::from_samples(env, subbands.fs())?.with_provenance(Some(exponent), None))
}

/// Full extraction: gammatone subbands, powerlaw compression, subband sum.
pub fn extract_envelope(
    audio: &MultichannelSignal,
    spec: &GammatoneBankSpec,
    exponent: f64,
) -> Result<Envelope> {
    let subbands = gammatone_filterbank(audio, spec)?;
    let env = powerlaw_envelope(&subbands, exponent)?;
    Ok(env.with_provenance(Some(exponent), Some(spec.clone())))
}

/// The standard envelope preprocessing chain: 1-9 Hz 4th-order zero-phase
/// Butterworth, rational resampling to `target_fs`, per-trial z-scoring.
pub fn preprocess_envelope(env: &Envelope, target_fs: f64) -> Result<Envelope> {
    let out = signal::preprocess_signal(env.as_signal(), 1.0, 9.0, 4, target_fs)?;
    Ok(Envelope::from_signal(out)?.with_provenance(env.exponent, env.bank.clone()))
}

/// Optional dataset-compatible intermediate stage (publication lineage):
/// bandpass without z-scoring, then resample. Typically 1-40 Hz down to
/// 128 Hz before the standard chain.
pub fn bandlimit_envelope(
    env: &Envelope,
    low_hz: f64,
    high_hz: f64,
    order: usize,
    target_fs: f64,
) -> Result<Envelope> {
    let filter = signal::design_butterworth_bandpass(order, low_hz, high_hz, env.fs())?;
    let filtered = signal::filtfilt(&filter, env.as_signal())?;
    let (up, down) = signal::rational_ratio(target_fs, env.fs())?;
    let resampled = signal::resample_rational(&filtered, up, down)?;
    Ok(Envelope::from_signal(resampled)?.with_provenance(env.exponent, env.bank.clone()))
}
