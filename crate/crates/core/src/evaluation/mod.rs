//! Cross-validation protocols over a dataset: leave-one-trial-out (within or
//! across conditions), leave-one-condition-out, leave-one-subject-out, and
//! cross-dataset training. Each fold pools training statistics, estimates the
//! shrinkage intensity, solves one decoder, reconstructs the held-out trials,
//! and scores windowed decisions at every requested window length.

mod report;

pub use report::{
    AccuracySummary, DecisionRow, EvaluationReport, FoldResult, FoldWindowResult, GroupSummary,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Condition, Dataset, Trial};
use crate::decision::{windowed_decisions, DecisionWindowConfig};
use crate::decoder::{
    accumulate_statistics, build_lag_matrix, lag_count, ledoit_wolf_from_stats, reconstruct,
    select_attended, solve_decoder, DecoderModel, TrialStatistics,
};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::signal::{zscore_per_trial, MultichannelSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// LOTO within one condition: train on the cell's other trial(s).
    LotoPerCondition,
    /// LOTO across all of a subject's trials.
    Loto,
    /// Leave out both trials of one condition.
    Loco,
    /// Leave out a whole subject; train on everyone else.
    Loso,
    /// One decoder trained on another dataset; use [`cross_dataset`].
    CrossDataset,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::LotoPerCondition => "loto-per-condition",
            Protocol::Loto => "loto",
            Protocol::Loco => "loco",
            Protocol::Loso => "loso",
            Protocol::CrossDataset => "cross-dataset",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "loto-per-condition" => Ok(Protocol::LotoPerCondition),
            "loto" => Ok(Protocol::Loto),
            "loco" => Ok(Protocol::Loco),
            "loso" => Ok(Protocol::Loso),
            "cross-dataset" => Ok(Protocol::CrossDataset),
            other => Err(Error::Config(format!("unknown protocol \"{other}\""))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One train/test split. Indices refer to `Dataset::trials()` order; for
/// cross-dataset evaluation, train indices refer to the training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub subject: Option<String>,
    /// Scope condition: the cell's condition for per-condition LOTO, the
    /// held-out condition for LOCO.
    pub condition: Option<Condition>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A cell that could not be evaluated, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub subject: String,
    pub condition: Option<Condition>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub protocol: Protocol,
    pub folds: Vec<Fold>,
    pub skipped: Vec<SkippedCell>,
}

/// Enumerate folds deterministically: subjects in dataset order, conditions
/// in canonical order, trials by index. Within every fold train and test are
/// disjoint at the trial level.
pub fn plan_folds(dataset: &Dataset, protocol: Protocol) -> Result<FoldPlan> {
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    let subjects = dataset.subjects();

    match protocol {
        Protocol::CrossDataset => {
            return Err(Error::Plan(
                "cross-dataset evaluation trains on a second dataset; use cross_dataset()".into(),
            ))
        }
        Protocol::LotoPerCondition => {
            for subject in &subjects {
                for condition in Condition::ALL {
                    let cell: Vec<usize> = dataset
                        .trial_indices_for(subject)
                        .into_iter()
                        .filter(|&i| dataset.trials()[i].condition == condition)
                        .collect();
                    if cell.is_empty() {
                        continue;
                    }
                    if cell.len() < 2 {
                        skipped.push(SkippedCell {
                            subject: subject.to_string(),
                            condition: Some(condition),
                            reason: format!("only {} trial(s) in the cell", cell.len()),
                        });
                        continue;
                    }
                    for &test_idx in &cell {
                        folds.push(Fold {
                            index: folds.len(),
                            subject: Some(subject.to_string()),
                            condition: Some(condition),
                            train: cell.iter().copied().filter(|&i| i != test_idx).collect(),
                            test: vec![test_idx],
                        });
                    }
                }
            }
        }
        Protocol::Loto => {
            for subject in &subjects {
                let own = dataset.trial_indices_for(subject);
                if own.len() < 2 {
                    skipped.push(SkippedCell {
                        subject: subject.to_string(),
                        condition: None,
                        reason: format!("only {} trial(s) for the subject", own.len()),
                    });
                    continue;
                }
                for &test_idx in &own {
                    folds.push(Fold {
                        index: folds.len(),
                        subject: Some(subject.to_string()),
                        condition: None,
                        train: own.iter().copied().filter(|&i| i != test_idx).collect(),
                        test: vec![test_idx],
                    });
                }
            }
        }
        Protocol::Loco => {
            for subject in &subjects {
                let own = dataset.trial_indices_for(subject);
                let present: Vec<Condition> = Condition::ALL
                    .into_iter()
                    .filter(|c| own.iter().any(|&i| dataset.trials()[i].condition == *c))
                    .collect();
                if present.len() < 2 {
                    skipped.push(SkippedCell {
                        subject: subject.to_string(),
                        condition: None,
                        reason: format!(
                            "only {} condition(s) present; nothing to train on",
                            present.len()
                        ),
                    });
                    continue;
                }
                for condition in present {
                    let (test, train): (Vec<usize>, Vec<usize>) = own
                        .iter()
                        .copied()
                        .partition(|&i| dataset.trials()[i].condition == condition);
                    folds.push(Fold {
                        index: folds.len(),
                        subject: Some(subject.to_string()),
                        condition: Some(condition),
                        train,
                        test,
                    });
                }
            }
        }
        Protocol::Loso => {
            if subjects.len() < 2 {
                return Err(Error::Plan(format!(
                    "leave-one-subject-out needs at least 2 subjects, got {}",
                    subjects.len()
                )));
            }
            for subject in &subjects {
                let test = dataset.trial_indices_for(subject);
                let train: Vec<usize> = (0..dataset.n_trials())
                    .filter(|i| !test.contains(i))
                    .collect();
                folds.push(Fold {
                    index: folds.len(),
                    subject: Some(subject.to_string()),
                    condition: None,
                    train,
                    test,
                });
            }
        }
    }

    for cell in &skipped {
        log::info!(
            "skipping {}{}: {}",
            cell.subject,
            cell.condition.map(|c| format!("/{c}")).unwrap_or_default(),
            cell.reason
        );
    }
    if folds.is_empty() {
        return Err(Error::Plan(format!(
            "no evaluable folds for {protocol}: {} cells skipped",
            skipped.len()
        )));
    }
    Ok(FoldPlan {
        protocol,
        folds,
        skipped,
    })
}

/// How the shrinkage intensity is chosen per fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum ShrinkageMode {
    /// Ledoit-Wolf on the pooled training statistics (default).
    LedoitWolf,
    /// Mean of per-trial Ledoit-Wolf intensities; experimental.
    LedoitWolfTrialMean,
    /// A fixed intensity; 0 disables shrinkage.
    Fixed(f64),
}

impl ShrinkageMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ledoit-wolf" => Ok(ShrinkageMode::LedoitWolf),
            "ledoit-wolf-trial-mean" => Ok(ShrinkageMode::LedoitWolfTrialMean),
            "none" => Ok(ShrinkageMode::Fixed(0.0)),
            other => {
                if let Some(v) = other.strip_prefix("fixed:") {
                    let v: f64 = v
                        .parse()
                        .map_err(|_| Error::Config(format!("bad shrinkage value \"{v}\"")))?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Config(format!(
                            "fixed shrinkage must be in [0, 1], got {v}"
                        )));
                    }
                    Ok(ShrinkageMode::Fixed(v))
                } else {
                    Err(Error::Config(format!(
                        "unknown shrinkage mode \"{other}\" (ledoit-wolf, ledoit-wolf-trial-mean, none, fixed:<v>)"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Post-stimulus lag span in milliseconds; the start must be 0 (the
    /// decoder is anti-causal from the current sample).
    pub lag_start_ms: f64,
    pub lag_end_ms: f64,
    pub shrinkage: ShrinkageMode,
    /// Z-score every trial's EEG and envelopes before use (idempotent if the
    /// container already stores z-scored data).
    pub zscore: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            lag_start_ms: 0.0,
            lag_end_ms: 400.0,
            shrinkage: ShrinkageMode::LedoitWolf,
            zscore: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag_start_ms != 0.0 {
            return Err(Error::Config(format!(
                "lag range must start at 0 ms (anti-causal decoder), got {}",
                self.lag_start_ms
            )));
        }
        if !(self.lag_end_ms >= 0.0) {
            return Err(Error::Config(format!(
                "lag range end must be >= 0 ms, got {}",
                self.lag_end_ms
            )));
        }
        if let ShrinkageMode::Fixed(v) = self.shrinkage {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "fixed shrinkage must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub window_lengths_s: Vec<f64>,
    /// Fractional window overlap in [0, 1). Overlapping windows produce
    /// dependent decisions, so significance thresholds are omitted then.
    pub overlap: f64,
    pub drop_partial: bool,
    pub significance_alpha: f64,
    pub decoder: DecoderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window_lengths_s: vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 60.0],
            overlap: 0.0,
            drop_partial: true,
            significance_alpha: 0.05,
            decoder: DecoderConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_lengths_s.is_empty() {
            return Err(Error::Config("need at least one window length".into()));
        }
        if !(0.0 < self.significance_alpha && self.significance_alpha < 1.0) {
            return Err(Error::Config(format!(
                "significance level must be in (0, 1), got {}",
                self.significance_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "window overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        self.decoder.validate()
    }

    pub fn config_hash(&self, protocol: Protocol) -> String {
        let text = serde_json::to_string(&(protocol.as_str(), self))
            .expect("config serialization cannot fail");
        hex_digest(text.as_bytes())
    }

    fn window_cfg(&self, len_s: f64) -> DecisionWindowConfig {
        DecisionWindowConfig {
            window_len_s: len_s,
            overlap: self.overlap,
            drop_partial: self.drop_partial,
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-trial training inputs after per-trial normalization.
struct PreparedTrial {
    stats: TrialStatistics,
    lambda_trial: f64,
}

fn check_homogeneous(trials: &[Trial]) -> Result<(f64, usize)> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Plan("dataset has no trials".into()))?;
    let fs = first.fs();
    let n_ch = first.eeg.n_channels();
    for t in trials {
        if (t.fs() - fs).abs() > 1e-9 * fs || t.eeg.n_channels() != n_ch {
            return Err(Error::Compatibility(format!(
                "trial {}/{}/{} has fs={} Hz, {} channels; expected fs={fs} Hz, {n_ch} channels",
                t.subject,
                t.condition,
                t.trial_index,
                t.fs(),
                t.eeg.n_channels()
            )));
        }
    }
    Ok((fs, n_ch))
}

fn normalized_eeg(trial: &Trial, zscore: bool) -> Result<MultichannelSignal> {
    if zscore {
        zscore_per_trial(&trial.eeg)
    } else {
        Ok(trial.eeg.clone())
    }
}

fn normalized_envelopes(trial: &Trial, zscore: bool) -> Result<(Envelope, Envelope)> {
    if zscore {
        let z1 = zscore_per_trial(trial.envelopes.0.as_signal())?;
        let z2 = zscore_per_trial(trial.envelopes.1.as_signal())?;
        Ok((Envelope::from_signal(z1)?, Envelope::from_signal(z2)?))
    } else {
        Ok(trial.envelopes.clone())
    }
}

fn prepare_trial(trial: &Trial, n_lags: usize, cfg: &DecoderConfig) -> Result<PreparedTrial> {
    let eeg = normalized_eeg(trial, cfg.zscore)?;
    let (s1, s2) = normalized_envelopes(trial, cfg.zscore)?;
    let attended = select_attended(&s1, &s2, &trial.labels)?;
    let x = build_lag_matrix(&eeg, n_lags)?;
    let stats = accumulate_statistics(&x, &attended)?;
    let lambda_trial = ledoit_wolf_from_stats(&stats);
    Ok(PreparedTrial {
        stats,
        lambda_trial,
    })
}

fn pool_fold(
    prepared: &[Option<PreparedTrial>],
    train: &[usize],
    mode: ShrinkageMode,
) -> Result<(TrialStatistics, f64)> {
    let mut iter = train.iter();
    let first = *iter
        .next()
        .ok_or_else(|| Error::Plan("fold has no training trials".into()))?;
    let mut pooled = prepared[first]
        .as_ref()
        .expect("training trial was prepared")
        .stats
        .clone();
    for &idx in iter {
        pooled.merge(&prepared[idx].as_ref().expect("training trial was prepared").stats)?;
    }
    let lambda = match mode {
        ShrinkageMode::LedoitWolf => ledoit_wolf_from_stats(&pooled),
        ShrinkageMode::LedoitWolfTrialMean => {
            let sum: f64 = train
                .iter()
                .map(|&i| prepared[i].as_ref().unwrap().lambda_trial)
                .sum();
            sum / train.len() as f64
        }
        ShrinkageMode::Fixed(v) => v,
    };
    Ok((pooled, lambda))
}

fn evaluate_fold(
    fold: &Fold,
    model: &DecoderModel,
    test_dataset: &Dataset,
    cfg: &EvalConfig,
    n_lags: usize,
) -> Result<FoldResult> {
    let mut windows: Vec<FoldWindowResult> = cfg
        .window_lengths_s
        .iter()
        .map(|&w| FoldWindowResult {
            window_len_s: w,
            n_decisions: 0,
            n_correct: 0,
            accuracy: None,
            n_undecidable: 0,
            flagged: false,
            decisions: Vec::new(),
            undecidable: Vec::new(),
        })
        .collect();

    for &test_idx in &fold.test {
        let trial = &test_dataset.trials()[test_idx];
        let eeg = normalized_eeg(trial, cfg.decoder.zscore)?;
        let (s1, s2) = normalized_envelopes(trial, cfg.decoder.zscore)?;
        let x = build_lag_matrix(&eeg, n_lags)?;
        let reconstructed = reconstruct(model, &x)?;

        for (wi, &len_s) in cfg.window_lengths_s.iter().enumerate() {
            match windowed_decisions(
                reconstructed.samples(),
                s1.samples(),
                s2.samples(),
                &trial.labels,
                trial.fs(),
                &cfg.window_cfg(len_s),
            ) {
                Ok(out) => {
                    let slot = &mut windows[wi];
                    slot.n_undecidable += out.n_undecidable;
                    if out.n_undecidable > 0 {
                        slot.undecidable.push(crate::evaluation::report::UndecidableCount {
                            subject: trial.subject.clone(),
                            condition: trial.condition,
                            trial_index: trial.trial_index,
                            count: out.n_undecidable,
                        });
                    }
                    for rec in out.records {
                        slot.decisions.push(DecisionRow {
                            subject: trial.subject.clone(),
                            condition: trial.condition,
                            trial_index: trial.trial_index,
                            window_index: rec.window_index,
                            start_sample: rec.start_sample,
                            rho1: rec.rho1,
                            rho2: rec.rho2,
                            decided: rec.decided,
                            truth: rec.truth,
                            correct: rec.correct,
                            tie: rec.tie,
                        });
                    }
                }
                Err(Error::NoWindows(_)) => {
                    // window longer than any constant-label segment
                }
                Err(e) => return Err(e),
            }
        }
    }

    for slot in &mut windows {
        slot.n_decisions = slot.decisions.len();
        slot.n_correct = slot.decisions.iter().filter(|d| d.correct).count();
        slot.accuracy = if slot.n_decisions > 0 {
            Some(slot.n_correct as f64 / slot.n_decisions as f64)
        } else {
            None
        };
        slot.flagged = slot.n_decisions == 0;
    }

    Ok(FoldResult {
        fold_index: fold.index,
        subject: fold.subject.clone(),
        condition: fold.condition,
        test_trials: fold
            .test
            .iter()
            .map(|&i| {
                let t = &test_dataset.trials()[i];
                (t.subject.clone(), t.condition, t.trial_index)
            })
            .collect(),
        lambda: model.lambda,
        nu: model.nu,
        train_samples: model.n_samples,
        decoder_digest: digest_of(&model.d),
        windows,
    })
}

fn digest_of(d: &ndarray::Array1<f64>) -> String {
    let mut bytes = Vec::with_capacity(8 * d.len());
    for v in d {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex_digest(&bytes)
}

/// Run one protocol over a dataset. Deterministic given dataset and config,
/// regardless of thread count: folds are computed independently and reduced
/// in fold order.
pub fn run_protocol(
    dataset: &Dataset,
    protocol: Protocol,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let plan = plan_folds(dataset, protocol)?;
    let (fs, _) = check_homogeneous(dataset.trials())?;
    let n_lags = lag_count(fs, cfg.decoder.lag_end_ms);

    // Per-trial statistics are fold-independent; compute each only once.
    let mut needed = vec![false; dataset.n_trials()];
    for fold in &plan.folds {
        for &i in &fold.train {
            needed[i] = true;
        }
    }
    let prepared: Vec<Option<PreparedTrial>> = needed
        .par_iter()
        .enumerate()
        .map(|(i, &need)| {
            if need {
                prepare_trial(&dataset.trials()[i], n_lags, &cfg.decoder).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let folds: Vec<FoldResult> = plan
        .folds
        .par_iter()
        .map(|fold| {
            let (stats, lambda) = pool_fold(&prepared, &fold.train, cfg.decoder.shrinkage)?;
            let model = solve_decoder(
                &stats,
                lambda,
                fs,
                (cfg.decoder.lag_start_ms, cfg.decoder.lag_end_ms),
            )?;
            evaluate_fold(fold, &model, dataset, cfg, n_lags)
        })
        .collect::<Result<_>>()?;

    Ok(report::assemble(
        protocol,
        dataset.name.clone(),
        None,
        cfg,
        folds,
        plan.skipped,
        fs,
        n_lags,
    ))
}

/// Train one decoder on everything in `train` and evaluate it on every
/// subject of `test`. Both datasets must share the channel count and rate.
pub fn cross_dataset(
    train: &Dataset,
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let (train_fs, train_ch) = check_homogeneous(train.trials())?;
    let (test_fs, test_ch) = check_homogeneous(test.trials())?;
    if (train_fs - test_fs).abs() > 1e-9 * train_fs || train_ch != test_ch {
        return Err(Error::Compatibility(format!(
            "training data is {train_ch} channels at {train_fs} Hz, test data {test_ch} channels at {test_fs} Hz"
        )));
    }
    let n_lags = lag_count(train_fs, cfg.decoder.lag_end_ms);

    let prepared: Vec<Option<PreparedTrial>> = train
        .trials()
        .par_iter()
        .map(|t| prepare_trial(t, n_lags, &cfg.decoder).map(Some))
        .collect::<Result<_>>()?;
    let all: Vec<usize> = (0..train.n_trials()).collect();
    let (stats, lambda) = pool_fold(&prepared, &all, cfg.decoder.shrinkage)?;
    let model = solve_decoder(
        &stats,
        lambda,
        train_fs,
        (cfg.decoder.lag_start_ms, cfg.decoder.lag_end_ms),
    )?;

    let folds_spec: Vec<Fold> = test
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| Fold {
            index: i,
            subject: Some(s.to_string()),
            condition: None,
            train: all.clone(),
            test: test.trial_indices_for(s),
        })
        .collect();
    let folds: Vec<FoldResult> = folds_spec
        .par_iter()
        .map(|fold| evaluate_fold(fold, &model, test, cfg, n_lags))
        .collect::<Result<_>>()?;

    Ok(report::assemble(
        Protocol::CrossDataset,
        test.name.clone(),
        Some(train.name.clone()),
        cfg,
        folds,
        Vec::new(),
        train_fs,
        n_lags,
    ))
}
