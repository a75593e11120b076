//! Correlation-based attention decisions: Pearson correlation of the
//! reconstructed envelope against both competing envelopes per decision
//! window, plus the binomial significance level for a given decision count.

use serde::{Deserialize, Serialize};

use crate::decoder::AttentionLabels;
use crate::error::{Error, Result};

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::ShapeMismatch(
            "correlation needs at least 2 samples".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ZeroVariance(
            "constant input to Pearson correlation".into(),
        ));
    }
    let rho = cov / (va * vb).sqrt();
    debug_assert!(rho.abs() <= 1.0 + 1e-12);
    Ok(rho)
}

/// How a trial is cut into decision windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionWindowConfig {
    /// Window length in seconds.
    pub window_len_s: f64,
    /// Fractional overlap in [0, 1); 0 means non-overlapping.
    pub overlap: f64,
    /// Drop a trailing window shorter than the full length.
    pub drop_partial: bool,
}

impl DecisionWindowConfig {
    pub fn new(window_len_s: f64) -> Self {
        Self {
            window_len_s,
            overlap: 0.0,
            drop_partial: true,
        }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        let w = (self.window_len_s * fs).round();
        if !(w >= 2.0) {
            return Err(Error::Config(format!(
                "decision window of {} s at {} Hz spans {w} samples; need >= 2",
                self.window_len_s, fs
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "window overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        Ok(())
    }
}

/// One attention decision over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub window_index: usize,
    pub start_sample: usize,
    pub n_samples: usize,
    pub rho1: f64,
    pub rho2: f64,
    /// 1 or 2; ties decide 1 and set `tie`.
    pub decided: u8,
    pub truth: u8,
    pub correct: bool,
    pub tie: bool,
}

/// Correlate a reconstructed window with both candidate envelopes and decide
/// the attended one by the larger correlation. An exact tie decides 1.
pub fn decide_window(sh: &[f64], s1: &[f64], s2: &[f64], truth: u8) -> Result<DecisionRecord> {
    if sh.len() != s1.len() || sh.len() != s2.len() {
        return Err(Error::ShapeMismatch(format!(
            "window lengths differ: {} / {} / {}",
            sh.len(),
            s1.len(),
            s2.len()
        )));
    }
    let rho1 = pearson(sh, s1)?;
    let rho2 = pearson(sh, s2)?;
    let tie = rho1 == rho2;
    let decided = if rho1 >= rho2 { 1 } else { 2 };
    Ok(DecisionRecord {
        window_index: 0,
        start_sample: 0,
        n_samples: sh.len(),
        rho1,
        rho2,
        decided,
        truth,
        correct: decided == truth,
        tie,
    })
}

/// All decisions of one trial at one window length.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDecisions {
    pub records: Vec<DecisionRecord>,
    /// Windows excluded because some input had zero variance there.
    pub n_undecidable: usize,
}

impl WindowedDecisions {
    pub fn n_correct(&self) -> usize {
        self.records.iter().filter(|r| r.correct).count()
    }

    /// Fraction correct over decidable windows; None when nothing decided.
    pub fn accuracy(&self) -> Option<f64> {
        if self.records.is_empty() {
            None
        } else {
            Some(self.n_correct() as f64 / self.records.len() as f64)
        }
    }
}

/// Cut a trial into decision windows and decide each one. Trials are split at
/// attention switches first, so every window has a single true label; windows
/// never straddle a switch.
pub fn windowed_decisions(
    sh: &[f64],
    s1: &[f64],
    s2: &[f64],
    labels: &AttentionLabels,
    fs: f64,
    cfg: &DecisionWindowConfig,
) -> Result<WindowedDecisions> {
    if sh.len() != s1.len() || sh.len() != s2.len() || sh.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "signal/label lengths differ: {} / {} / {} / {}",
            sh.len(),
            s1.len(),
            s2.len(),
            labels.len()
        )));
    }
    cfg.validate(fs)?;
    let w = (cfg.window_len_s * fs).round() as usize;
    let hop = (((w as f64) * (1.0 - cfg.overlap)).round() as usize).max(1);

    let mut records = Vec::new();
    let mut n_undecidable = 0;
    let mut window_index = 0;
    for (seg_start, seg_end, truth) in labels.segments() {
        let mut start = seg_start;
        while start < seg_end {
            let full_end = start + w;
            let end = full_end.min(seg_end);
            let is_partial = end < full_end;
            if is_partial && cfg.drop_partial {
                break;
            }
            if end - start < 2 {
                break;
            }
            match decide_window(&sh[start..end], &s1[start..end], &s2[start..end], truth) {
                Ok(mut record) => {
                    record.window_index = window_index;
                    record.start_sample = start;
                    records.push(record);
                    window_index += 1;
                }
                Err(Error::ZeroVariance(_)) => {
                    n_undecidable += 1;
                    log::debug!("undecidable window at sample {start} (zero variance)");
                }
                Err(e) => return Err(e),
            }
            if is_partial {
                break;
            }
            start += hop;
            // with overlap, stop once the next full window no longer fits
            if cfg.overlap > 0.0 && start + w > seg_end {
                break;
            }
        }
    }
    if records.is_empty() && n_undecidable == 0 {
        return Err(Error::NoWindows(format!(
            "no window of {} s fits the labeled segments",
            cfg.window_len_s
        )));
    }
    Ok(WindowedDecisions {
        records,
        n_undecidable,
    })
}

/// Minimum above-chance accuracy at significance level `alpha`: k*/n where k*
/// is the smallest k with BinomialCDF(k; n, 1/2) >= 1 - alpha, the CDF summed
/// exactly in log space.
pub fn significance_threshold(n_decisions: usize, alpha: f64) -> Result<f64> {
    if n_decisions < 1 {
        return Err(Error::Config("need at least one decision".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!(
            "significance level must be in (0, 1), got {alpha}"
        )));
    }
    let n = n_decisions;
    let ln_half = 0.5f64.ln();
    let mut ln_binom = 0.0; // ln C(n, 0)
    let mut cdf = 0.0;
    for k in 0..=n {
        cdf += (ln_binom + n as f64 * ln_half).exp();
        if cdf >= 1.0 - alpha {
            return Ok(k as f64 / n as f64);
        }
        ln_binom += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
    }
    Ok(1.0)
}
