//! Evaluation results: per-fold decisions, pooled accuracy summaries with
//! binomial significance thresholds, and the JSON/CSV exports.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Condition;
use crate::decision::significance_threshold;
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Protocol, SkippedCell};

/// One attention decision, tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub subject: String,
    pub condition: Condition,
    pub trial_index: usize,
    pub window_index: usize,
    pub start_sample: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub decided: u8,
    pub truth: u8,
    pub correct: bool,
    pub tie: bool,
}

/// Undecidable (zero-variance) windows of one test trial at one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndecidableCount {
    pub subject: String,
    pub condition: Condition,
    pub trial_index: usize,
    pub count: usize,
}

/// Decisions of one fold at one window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldWindowResult {
    pub window_len_s: f64,
    pub n_decisions: usize,
    pub n_correct: usize,
    pub accuracy: Option<f64>,
    pub n_undecidable: usize,
    /// True when the fold produced no decidable window at this length.
    pub flagged: bool,
    pub decisions: Vec<DecisionRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undecidable: Vec<UndecidableCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub subject: Option<String>,
    pub condition: Option<Condition>,
    /// (subject, condition, trial_index) of every test trial.
    pub test_trials: Vec<(String, Condition, usize)>,
    pub lambda: f64,
    pub nu: f64,
    pub train_samples: usize,
    /// SHA-256 of the decoder coefficients; lets tests assert that held-out
    /// data never influenced training.
    pub decoder_digest: String,
    pub windows: Vec<FoldWindowResult>,
}

/// Pooled decisions at one window length, with the significance threshold
/// for that decision count attached (omitted for overlapping windows, whose
/// decisions are dependent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub window_len_s: f64,
    pub n_decisions: usize,
    pub n_correct: usize,
    pub accuracy: Option<f64>,
    pub n_undecidable: usize,
    pub significance_threshold: Option<f64>,
    pub significant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_note: Option<String>,
}

/// Accuracy summaries for one grouping key (a subject, a condition, or one
/// subject-condition cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub accuracies: Vec<AccuracySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tool_version: String,
    pub protocol: Protocol,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_dataset: Option<String>,
    pub fs_hz: f64,
    pub n_lags: usize,
    pub config: EvalConfig,
    pub config_hash: String,
    pub overall: Vec<AccuracySummary>,
    pub per_subject: Vec<GroupSummary>,
    pub per_condition: Vec<GroupSummary>,
    pub per_subject_condition: Vec<GroupSummary>,
    pub skipped: Vec<SkippedCell>,
    pub folds: Vec<FoldResult>,
}

impl EvaluationReport {
    /// Pooled accuracy over all decisions at the given window length.
    pub fn overall_accuracy(&self, window_len_s: f64) -> Option<f64> {
        self.overall
            .iter()
            .find(|a| a.window_len_s == window_len_s)
            .and_then(|a| a.accuracy)
    }

    pub fn condition_summary(&self, condition: Condition) -> Option<&GroupSummary> {
        self.per_condition
            .iter()
            .find(|g| g.condition == Some(condition))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Schema(format!("report serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// One row per decision:
    /// subject,condition,trial,fold,window_index,window_len_s,rho1,rho2,decided,truth,correct,tie
    pub fn write_decisions_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record([
            "subject",
            "condition",
            "trial",
            "fold",
            "window_index",
            "window_len_s",
            "rho1",
            "rho2",
            "decided",
            "truth",
            "correct",
            "tie",
        ])
        .map_err(|e| Error::Schema(format!("csv: {e}")))?;
        for fold in &self.folds {
            for win in &fold.windows {
                for d in &win.decisions {
                    w.write_record([
                        d.subject.clone(),
                        d.condition.as_str().to_string(),
                        d.trial_index.to_string(),
                        fold.fold_index.to_string(),
                        d.window_index.to_string(),
                        format_float(win.window_len_s),
                        format_float(d.rho1),
                        format_float(d.rho2),
                        d.decided.to_string(),
                        d.truth.to_string(),
                        d.correct.to_string(),
                        d.tie.to_string(),
                    ])
                    .map_err(|e| Error::Schema(format!("csv: {e}")))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Accuracy-vs-window-length table underlying the usual figures: rows per
    /// subject-condition cell, per subject, per condition, and overall
    /// ("all" marks a pooled dimension).
    pub fn write_figure_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record([
            "protocol",
            "subject",
            "condition",
            "window_len_s",
            "n_decisions",
            "n_correct",
            "accuracy",
            "n_undecidable",
            "significance_threshold",
            "significant",
        ])
        .map_err(|e| Error::Schema(format!("csv: {e}")))?;
        let mut groups: Vec<(&str, &str, &[AccuracySummary])> = Vec::new();
        for g in &self.per_subject_condition {
            groups.push((
                g.subject.as_deref().unwrap_or("all"),
                g.condition.map(|c| c.as_str()).unwrap_or("all"),
                &g.accuracies,
            ));
        }
        for g in &self.per_subject {
            groups.push((g.subject.as_deref().unwrap_or("all"), "all", &g.accuracies));
        }
        for g in &self.per_condition {
            groups.push((
                "all",
                g.condition.map(|c| c.as_str()).unwrap_or("all"),
                &g.accuracies,
            ));
        }
        groups.push(("all", "all", &self.overall));
        for (subject, condition, acc) in groups {
            for a in acc {
                w.write_record([
                    self.protocol.as_str().to_string(),
                    subject.to_string(),
                    condition.to_string(),
                    format_float(a.window_len_s),
                    a.n_decisions.to_string(),
                    a.n_correct.to_string(),
                    a.accuracy.map(format_float).unwrap_or_default(),
                    a.n_undecidable.to_string(),
                    a.significance_threshold
                        .map(format_float)
                        .unwrap_or_default(),
                    a.significant.map(|s| s.to_string()).unwrap_or_default(),
                ])
                .map_err(|e| Error::Schema(format!("csv: {e}")))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Human-readable per-condition summary at the window length closest to
    /// the requested one.
    pub fn summary_table(&self, window_len_s: f64) -> String {
        let target = self
            .config
            .window_lengths_s
            .iter()
            .copied()
            .min_by(|a, b| {
                (a - window_len_s)
                    .abs()
                    .total_cmp(&(b - window_len_s).abs())
            })
            .unwrap_or(window_len_s);
        let mut out = String::new();
        out.push_str(&format!(
            "{} on {} ({} s windows)\n",
            self.protocol, self.dataset, target
        ));
        out.push_str(&format!(
            "{:<22} {:>9} {:>7} {:>10} {:>12}\n",
            "condition", "accuracy", "n", "threshold", "significant"
        ));
        let mut rows: Vec<(&str, &[AccuracySummary])> = Vec::new();
        for g in &self.per_condition {
            rows.push((g.condition.map(|c| c.as_str()).unwrap_or("?"), &g.accuracies));
        }
        rows.push(("overall", &self.overall));
        for (name, acc) in rows {
            if let Some(a) = acc.iter().find(|a| a.window_len_s == target) {
                out.push_str(&format!(
                    "{:<22} {:>9} {:>7} {:>10} {:>12}\n",
                    name,
                    a.accuracy.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
                    a.n_decisions,
                    a.significance_threshold
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "-".into()),
                    a.significant
                        .map(|s| if s { "yes" } else { "no" }.to_string())
                        .unwrap_or_else(|| "-".into()),
                ));
            }
        }
        out
    }
}

fn format_float(v: f64) -> String {
    // shortest round-trip representation; deterministic for equal inputs
    format!("{v}")
}

struct Tally {
    n: usize,
    correct: usize,
    undecidable: usize,
}

/// Build the aggregates and assemble the report. Pooling is over decisions
/// (not over fold accuracies), matching how the binomial significance level
/// is defined over the total decision count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    protocol: Protocol,
    dataset: String,
    train_dataset: Option<String>,
    cfg: &EvalConfig,
    folds: Vec<FoldResult>,
    skipped: Vec<SkippedCell>,
    fs_hz: f64,
    n_lags: usize,
) -> EvaluationReport {
    let alpha = cfg.significance_alpha;
    let dependent = cfg.overlap > 0.0;

    let summarize = |filter: &dyn Fn(&str, Condition) -> bool| -> Vec<AccuracySummary> {
        cfg.window_lengths_s
            .iter()
            .map(|&len| {
                let mut tally = Tally {
                    n: 0,
                    correct: 0,
                    undecidable: 0,
                };
                for fold in &folds {
                    for win in &fold.windows {
                        if win.window_len_s != len {
                            continue;
                        }
                        for d in &win.decisions {
                            if filter(&d.subject, d.condition) {
                                tally.n += 1;
                                tally.correct += d.correct as usize;
                            }
                        }
                        for u in &win.undecidable {
                            if filter(&u.subject, u.condition) {
                                tally.undecidable += u.count;
                            }
                        }
                    }
                }
                let accuracy = (tally.n > 0).then(|| tally.correct as f64 / tally.n as f64);
                let (threshold, note) = if dependent {
                    (
                        None,
                        Some("overlapping windows: dependent decisions, no binomial level".into()),
                    )
                } else if tally.n > 0 {
                    (significance_threshold(tally.n, alpha).ok(), None)
                } else {
                    (None, None)
                };
                AccuracySummary {
                    window_len_s: len,
                    n_decisions: tally.n,
                    n_correct: tally.correct,
                    accuracy,
                    n_undecidable: tally.undecidable,
                    significance_threshold: threshold,
                    significant: match (accuracy, threshold) {
                        (Some(acc), Some(thr)) => Some(acc > thr),
                        _ => None,
                    },
                    threshold_note: note,
                }
            })
            .collect()
    };

    let mut subjects: Vec<String> = Vec::new();
    let mut conditions: BTreeSet<Condition> = BTreeSet::new();
    let mut cells: Vec<(String, Condition)> = Vec::new();
    for fold in &folds {
        for win in &fold.windows {
            for d in &win.decisions {
                if !subjects.contains(&d.subject) {
                    subjects.push(d.subject.clone());
                }
                conditions.insert(d.condition);
                if !cells.contains(&(d.subject.clone(), d.condition)) {
                    cells.push((d.subject.clone(), d.condition));
                }
            }
        }
    }

    let overall = summarize(&|_, _| true);
    let per_subject = subjects
        .iter()
        .map(|s| GroupSummary {
            subject: Some(s.clone()),
            condition: None,
            accuracies: summarize(&|subj: &str, _| subj == s),
        })
        .collect();
    let per_condition = conditions
        .iter()
        .map(|&c| GroupSummary {
            subject: None,
            condition: Some(c),
            accuracies: summarize(&|_, cond| cond == c),
        })
        .collect();
    let per_subject_condition = cells
        .iter()
        .map(|(s, c)| GroupSummary {
            subject: Some(s.clone()),
            condition: Some(*c),
            accuracies: summarize(&|subj: &str, cond| subj == s && cond == *c),
        })
        .collect();

    EvaluationReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        protocol,
        dataset,
        train_dataset,
        fs_hz,
        n_lags,
        config: cfg.clone(),
        config_hash: cfg.config_hash(protocol),
        overall,
        per_subject,
        per_condition,
        per_subject_condition,
        skipped,
        folds,
    }
}
