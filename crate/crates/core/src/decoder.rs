//! The backward model: time-lagged design matrix, correlation statistics,
//! Ledoit-Wolf shrinkage, the regularized normal-equation solve, and
//! reconstruction of the attended envelope from EEG.
//!
//! The decoder is anti-causal: the reconstruction at stimulus time t combines
//! EEG samples at t..t+L-1, because the neural response follows the stimulus.
//! With d the stacked per-channel lag coefficients and X the lagged design
//! matrix, training minimizes ||s_a - X d||^2, solved from the statistics
//! R_xx = X'X and r_xs = X's_a with the sample covariance shrunk toward a
//! scaled identity.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;

/// T x (C*L) zero-padded Hankel stacking of the EEG lags. Columns are
/// channel-major blocks, lag-minor within a block: column c*L + l holds
/// x_c(t + l), with zeros once t + l runs past the end of the trial.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesignMatrix {
    data: Array2<f64>,
    n_channels: usize,
    n_lags: usize,
}

impl LaggedDesignMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_lags(&self) -> usize {
        self.n_lags
    }

    pub fn n_coefficients(&self) -> usize {
        self.n_channels * self.n_lags
    }
}

/// Decoder length for a post-stimulus lag span in milliseconds:
/// floor(span * fs) + 1 taps, e.g. 0..400 ms at 20 Hz gives L = 9.
pub fn lag_count(fs: f64, lag_end_ms: f64) -> usize {
    (lag_end_ms / 1000.0 * fs + 1e-9).floor() as usize + 1
}

/// Build the lagged design matrix with L anti-causal lags per channel.
pub fn build_lag_matrix(eeg: &MultichannelSignal, n_lags: usize) -> Result<LaggedDesignMatrix> {
    let t_len = eeg.n_samples();
    let n_ch = eeg.n_channels();
    if n_lags < 1 {
        return Err(Error::InvalidLag("lag count must be >= 1".into()));
    }
    if n_lags > t_len {
        return Err(Error::InvalidLag(format!(
            "lag count {n_lags} exceeds trial length {t_len}"
        )));
    }
    let samples = eeg.samples();
    let mut data = Array2::zeros((t_len, n_ch * n_lags));
    for c in 0..n_ch {
        for l in 0..n_lags {
            let col = c * n_lags + l;
            for t in 0..t_len - l {
                data[(t, col)] = samples[(t + l, c)];
            }
        }
    }
    Ok(LaggedDesignMatrix {
        data,
        n_channels: n_ch,
        n_lags,
    })
}

/// Per-sample attention labels: 1 or 2 for every time sample of a trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionLabels {
    y: Vec<u8>,
}

impl AttentionLabels {
    pub fn from_samples(y: Vec<u8>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::ShapeMismatch("labels must be nonempty".into()));
        }
        if let Some(t) = y.iter().position(|&v| v != 1 && v != 2) {
            return Err(Error::Schema(format!(
                "label at sample {t} is {}, expected 1 or 2",
                y[t]
            )));
        }
        Ok(Self { y })
    }

    /// Build from run-length pairs (start_sample, label). Runs must start at
    /// 0 and strictly increase.
    pub fn from_runs(runs: &[(usize, u8)], n_samples: usize) -> Result<Self> {
        if runs.is_empty() || runs[0].0 != 0 {
            return Err(Error::Schema("label runs must start at sample 0".into()));
        }
        let mut y = Vec::with_capacity(n_samples);
        for (i, &(start, label)) in runs.iter().enumerate() {
            let end = runs.get(i + 1).map_or(n_samples, |r| r.0);
            if end <= start || end > n_samples {
                return Err(Error::Schema(format!(
                    "label run {i} spans [{start}, {end}) outside 0..{n_samples}"
                )));
            }
            y.extend(std::iter::repeat(label).take(end - start));
        }
        Self::from_samples(y)
    }

    pub fn to_runs(&self) -> Vec<(usize, u8)> {
        let mut runs = vec![(0usize, self.y[0])];
        for (t, &v) in self.y.iter().enumerate().skip(1) {
            if v != runs.last().unwrap().1 {
                runs.push((t, v));
            }
        }
        runs
    }

    /// Sample indices where the label changes.
    pub fn switch_points(&self) -> Vec<usize> {
        self.to_runs().iter().skip(1).map(|r| r.0).collect()
    }

    /// Constant-label segments as (start, end, label), end exclusive.
    pub fn segments(&self) -> Vec<(usize, usize, u8)> {
        let runs = self.to_runs();
        runs.iter()
            .enumerate()
            .map(|(i, &(start, label))| {
                let end = runs.get(i + 1).map_or(self.y.len(), |r| r.0);
                (start, end, label)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn samples(&self) -> &[u8] {
        &self.y
    }
}

/// Pick the attended envelope sample-by-sample according to the labels.
pub fn select_attended(s1: &Envelope, s2: &Envelope, labels: &AttentionLabels) -> Result<Envelope> {
    if s1.len() != s2.len() || s1.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "envelope/label lengths differ: {} / {} / {}",
            s1.len(),
            s2.len(),
            labels.len()
        )));
    }
    let out: Vec<f64> = labels
        .samples()
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            if y == 1 {
                s1.samples()[t]
            } else {
                s2.samples()[t]
            }
        })
        .collect();
    Envelope::from_samples(out, s1.fs())
}

/// Sufficient statistics of one or more trials: R_xx = X'X, r_xs = X's_a,
/// plus the quartic sum needed by the Ledoit-Wolf intensity. Statistics from
/// separate trials combine by addition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialStatistics {
    r_xx: Array2<f64>,
    r_xs: Array1<f64>,
    sum_quartic: f64,
    n_samples: usize,
    n_channels: usize,
    n_lags: usize,
}

impl TrialStatistics {
    pub fn r_xx(&self) -> &Array2<f64> {
        &self.r_xx
    }

    pub fn r_xs(&self) -> &Array1<f64> {
        &self.r_xs
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_lags(&self) -> usize {
        self.n_lags
    }

    /// Merge statistics accumulated from another set of trials.
    pub fn merge(&mut self, other: &TrialStatistics) -> Result<()> {
        if self.r_xx.dim() != other.r_xx.dim()
            || self.n_channels != other.n_channels
            || self.n_lags != other.n_lags
        {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge statistics of {}x{} lags with {}x{}",
                self.n_channels, self.n_lags, other.n_channels, other.n_lags
            )));
        }
        self.r_xx += &other.r_xx;
        self.r_xs += &other.r_xs;
        self.sum_quartic += other.sum_quartic;
        self.n_samples += other.n_samples;
        Ok(())
    }
}

/// Accumulate the unnormalized auto- and cross-correlation statistics of one
/// trial. `R_xx` is symmetrized exactly.
pub fn accumulate_statistics(x: &LaggedDesignMatrix, s_a: &Envelope) -> Result<TrialStatistics> {
    if x.n_samples() != s_a.len() {
        return Err(Error::ShapeMismatch(format!(
            "design matrix has {} rows but envelope has {} samples",
            x.n_samples(),
            s_a.len()
        )));
    }
    let data = x.data();
    let gram = data.t().dot(data);
    let r_xx = (&gram + &gram.t()) * 0.5;
    let target = Array1::from_iter(s_a.samples().iter().copied());
    let r_xs = data.t().dot(&target);
    let sum_quartic = data
        .rows()
        .into_iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|v| v * v).sum();
            sq * sq
        })
        .sum();
    Ok(TrialStatistics {
        r_xx,
        r_xs,
        sum_quartic,
        n_samples: x.n_samples(),
        n_channels: x.n_channels(),
        n_lags: x.n_lags(),
    })
}

/// Ledoit-Wolf optimal intensity for shrinking S = R_xx/T toward nu*I with
/// nu = trace(S)/p:
///
///   lambda = min(1, ((1/T^2) * sum_t ||x_t x_t' - S||_F^2) / ||S - nu*I||_F^2)
///
/// computed from the accumulated sufficient statistics. A zero denominator
/// (S already equals the target) returns 1.
pub fn ledoit_wolf_from_stats(stats: &TrialStatistics) -> f64 {
    let t = stats.n_samples as f64;
    let p = stats.r_xx.nrows();
    let s = &stats.r_xx / t;
    let nu = s.diag().sum() / p as f64;
    let s_sq: f64 = s.iter().map(|v| v * v).sum();
    // sum_t ||x_t x_t' - S||^2 = sum_t ||x_t||^4 - T ||S||^2
    let numerator = (stats.sum_quartic - t * s_sq) / (t * t);
    let mut denominator = 0.0;
    for i in 0..p {
        for j in 0..p {
            let target = if i == j { nu } else { 0.0 };
            let d = s[(i, j)] - target;
            denominator += d * d;
        }
    }
    if denominator == 0.0 {
        return 1.0;
    }
    (numerator / denominator).clamp(0.0, 1.0)
}

/// Ledoit-Wolf intensity straight from a design matrix.
pub fn ledoit_wolf_intensity(x: &LaggedDesignMatrix) -> f64 {
    let zeros = Envelope::from_samples(vec![0.0; x.n_samples()], 1.0)
        .expect("zero target envelope is valid");
    let stats = accumulate_statistics(x, &zeros).expect("shapes match by construction");
    ledoit_wolf_from_stats(&stats)
}

/// A trained spatio-temporal decoder along with its training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    /// Stacked coefficients d_c(l), channel-major, lag-minor; length C*L.
    pub d: Array1<f64>,
    pub r_xx: Array2<f64>,
    pub r_xs: Array1<f64>,
    pub lambda: f64,
    /// Shrinkage target scale trace(R_xx/T)/(C*L).
    pub nu: f64,
    pub n_samples: usize,
    pub n_channels: usize,
    pub n_lags: usize,
    pub fs: f64,
    pub lag_range_ms: (f64, f64),
}

/// Solve the shrinkage-regularized normal equations
/// ((1-lambda) S + lambda nu I) d = r_xs / T with S = R_xx / T, via Cholesky
/// with one step of iterative refinement. The solution satisfies
/// ||A d - b|| <= 1e-8 ||b||.
pub fn solve_decoder(
    stats: &TrialStatistics,
    lambda: f64,
    fs: f64,
    lag_range_ms: (f64, f64),
) -> Result<DecoderModel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "shrinkage intensity must be in [0, 1], got {lambda}"
        )));
    }
    if stats.n_samples == 0 {
        return Err(Error::ShapeMismatch("no training samples".into()));
    }
    let t = stats.n_samples as f64;
    let p = stats.r_xx.nrows();
    let nu = stats.r_xx.diag().sum() / t / p as f64;

    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let mut v = (1.0 - lambda) * stats.r_xx[(i, j)] / t;
            if i == j {
                v += lambda * nu;
            }
            a[(i, j)] = v;
        }
    }
    let b = DVector::from_fn(p, |i, _| stats.r_xs[i] / t);

    let b_norm = b.norm();
    if b_norm == 0.0 {
        // Zero target: the exact solution is d = 0 for any nonsingular A.
        return Ok(DecoderModel {
            d: Array1::zeros(p),
            r_xx: stats.r_xx.clone(),
            r_xs: stats.r_xs.clone(),
            lambda,
            nu,
            n_samples: stats.n_samples,
            n_channels: stats.n_channels,
            n_lags: stats.n_lags,
            fs,
            lag_range_ms,
        });
    }

    let singular = || {
        Error::SingularSystem(format!(
            "covariance is numerically singular at lambda = {lambda}; use lambda > 0 (shrinkage)"
        ))
    };
    let chol = Cholesky::new(a.clone()).ok_or_else(singular)?;
    // A factorization of an exactly singular matrix can still "succeed" with
    // a rounding-level pivot; treat pivot collapse as singular too.
    let diag = chol.l_dirty().diagonal();
    let max_pivot = diag.iter().cloned().fold(0.0_f64, f64::max);
    let min_pivot = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-7 * max_pivot) {
        return Err(singular());
    }
    let mut d = chol.solve(&b);
    // One refinement step guards the residual contract.
    let residual = &b - &a * &d;
    d += chol.solve(&residual);

    let rel = (&b - &a * &d).norm() / b_norm;
    if rel > 1e-8 {
        return Err(Error::Numerical(format!(
            "normal-equation solve residual {rel:e} exceeds 1e-8"
        )));
    }

    Ok(DecoderModel {
        d: Array1::from_iter(d.iter().copied()),
        r_xx: stats.r_xx.clone(),
        r_xs: stats.r_xs.clone(),
        lambda,
        nu,
        n_samples: stats.n_samples,
        n_channels: stats.n_channels,
        n_lags: stats.n_lags,
        fs,
        lag_range_ms,
    })
}

/// Reconstruct the attended-envelope estimate s_hat = X d.
pub fn reconstruct(model: &DecoderModel, x: &LaggedDesignMatrix) -> Result<Envelope> {
    if x.n_coefficients() != model.d.len() {
        return Err(Error::ShapeMismatch(format!(
            "design matrix has {} columns but decoder has {} coefficients",
            x.n_coefficients(),
            model.d.len()
        )));
    }
    let out = x.data().dot(&model.d);
    Envelope::from_samples(out.to_vec(), model.fs)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    n_channels: usize,
    n_lags: usize,
    n_samples: usize,
    lambda: f64,
    nu: f64,
    fs_hz: f64,
    lag_range_ms: (f64, f64),
    coefficients: String,
    r_xx: String,
    r_xs: String,
}

/// Persist a trained decoder: a JSON manifest plus float64 little-endian
/// blobs for d, R_xx (row-major), and r_xs.
pub fn save_model(model: &DecoderModel, dir: &Path, force: bool) -> Result<PathBuf> {
    let manifest_path = dir.join("model.json");
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!(
            "refusing to overwrite {} without force",
            manifest_path.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_f64_blob(&dir.join("model_d.f64le"), model.d.as_slice().unwrap())?;
    write_f64_blob(
        &dir.join("model_rxx.f64le"),
        model.r_xx.as_slice().expect("row-major owned array"),
    )?;
    write_f64_blob(&dir.join("model_rxs.f64le"), model.r_xs.as_slice().unwrap())?;
    let manifest = ModelManifest {
        format_version: 1,
        n_channels: model.n_channels,
        n_lags: model.n_lags,
        n_samples: model.n_samples,
        lambda: model.lambda,
        nu: model.nu,
        fs_hz: model.fs,
        lag_range_ms: model.lag_range_ms,
        coefficients: "model_d.f64le".into(),
        r_xx: "model_rxx.f64le".into(),
        r_xs: "model_rxs.f64le".into(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Schema(format!("model manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn load_model(dir: &Path) -> Result<DecoderModel> {
    let manifest_path = dir.join("model.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::MissingFile {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("model manifest: {e}")))?;
    if manifest.format_version != 1 {
        return Err(Error::Schema(format!(
            "unsupported model format version {}",
            manifest.format_version
        )));
    }
    let p = manifest.n_channels * manifest.n_lags;
    let d = read_f64_blob(&dir.join(&manifest.coefficients), p)?;
    let r_xx = read_f64_blob(&dir.join(&manifest.r_xx), p * p)?;
    let r_xs = read_f64_blob(&dir.join(&manifest.r_xs), p)?;
    Ok(DecoderModel {
        d: Array1::from_vec(d),
        r_xx: Array2::from_shape_vec((p, p), r_xx).expect("length checked"),
        r_xs: Array1::from_vec(r_xs),
        lambda: manifest.lambda,
        nu: manifest.nu,
        n_samples: manifest.n_samples,
        n_channels: manifest.n_channels,
        n_lags: manifest.n_lags,
        fs: manifest.fs_hz,
        lag_range_ms: manifest.lag_range_ms,
    })
}

pub(crate) fn write_f64_blob(path: &Path, data: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for &v in data {
        w.write_f64::<LittleEndian>(v).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f64_blob(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::MissingFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let meta = file.metadata().map_err(|e| Error::io(path, e))?;
    if meta.len() != 8 * expected_len as u64 {
        return Err(Error::CorruptDataset(format!(
            "{} holds {} bytes, expected {} ({} float64 values)",
            path.display(),
            meta.len(),
            8 * expected_len,
            expected_len
        )));
    }
    let mut r = std::io::BufReader::new(file.take(8 * expected_len as u64));
    let mut out = vec![0.0; expected_len];
    r.read_f64_into::<LittleEndian>(&mut out)
        .map_err(|e| Error::io(path, e))?;
    Ok(out)
}
