//! Data model for AAD recordings (subjects x conditions x trials with
//! competing envelopes, EEG, and attention labels), the on-disk container
//! format, and a deterministic synthetic forward-model generator.

mod container;
mod synthetic;

pub use container::{load_dataset, save_dataset};
pub use synthetic::{forward_mix, generate_synthetic, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::decoder::AttentionLabels;
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;

/// The four audiovisual instruction regimes of the recorded experiment.
/// Only `StaticVideo` has gaze congruent with auditory attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NoVisuals,
    StaticVideo,
    MovingVideo,
    MovingTargetNoise,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::NoVisuals,
        Condition::StaticVideo,
        Condition::MovingVideo,
        Condition::MovingTargetNoise,
    ];

    pub fn is_congruent(self) -> bool {
        matches!(self, Condition::StaticVideo)
    }

    pub fn description(self) -> &'static str {
        match self {
            Condition::NoVisuals => "fixate an imaginary point on a black screen",
            Condition::StaticVideo => "fixate a static video of the attended speaker",
            Condition::MovingVideo => "follow a moving video of the attended speaker",
            Condition::MovingTargetNoise => "follow a moving crosshair with background babble",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NoVisuals => "no_visuals",
            Condition::StaticVideo => "static_video",
            Condition::MovingVideo => "moving_video",
            Condition::MovingTargetNoise => "moving_target_noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_visuals" => Ok(Condition::NoVisuals),
            "static_video" => Ok(Condition::StaticVideo),
            "moving_video" => Ok(Condition::MovingVideo),
            "moving_target_noise" => Ok(Condition::MovingTargetNoise),
            other => Err(Error::Schema(format!("unknown condition \"{other}\""))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled recording: EEG, the two competing envelopes, and per-sample
/// attention labels, all at the same rate and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject: String,
    pub condition: Condition,
    /// Index of this trial within its (subject, condition) cell.
    pub trial_index: usize,
    pub eeg: MultichannelSignal,
    pub envelopes: (Envelope, Envelope),
    pub labels: AttentionLabels,
    /// Rate of the recording this trial was derived from, if any.
    pub origin_fs_hz: Option<f64>,
    pub provenance: Option<String>,
}

impl Trial {
    pub fn validate(&self) -> Result<()> {
        let n = self.eeg.n_samples();
        let (s1, s2) = (&self.envelopes.0, &self.envelopes.1);
        if s1.len() != n || s2.len() != n || self.labels.len() != n {
            return Err(Error::CorruptDataset(format!(
                "trial {}/{}/{}: EEG has {n} samples but envelopes/labels have {}/{}/{}",
                self.subject,
                self.condition,
                self.trial_index,
                s1.len(),
                s2.len(),
                self.labels.len()
            )));
        }
        for (what, fs) in [("envelope 1", s1.fs()), ("envelope 2", s2.fs())] {
            if (fs - self.eeg.fs()).abs() > 1e-9 * self.eeg.fs() {
                return Err(Error::CorruptDataset(format!(
                    "trial {}/{}/{}: {what} at {fs} Hz but EEG at {} Hz",
                    self.subject,
                    self.condition,
                    self.trial_index,
                    self.eeg.fs()
                )));
            }
        }
        Ok(())
    }

    pub fn fs(&self) -> f64 {
        self.eeg.fs()
    }

    pub fn n_samples(&self) -> usize {
        self.eeg.n_samples()
    }

    pub fn duration_s(&self) -> f64 {
        self.eeg.duration_s()
    }
}

/// An absent (subject, condition, trial) cell relative to the expected
/// trials-per-condition layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCell {
    pub subject: String,
    pub condition: Condition,
    pub trial_index: usize,
}

/// A named collection of trials. Trial order is preserved and meaningful:
/// fold plans and reports enumerate in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    trials: Vec<Trial>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, trials: Vec<Trial>) -> Result<Self> {
        for t in &trials {
            t.validate()?;
        }
        Ok(Self {
            name: name.into(),
            trials,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    /// Subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.trials {
            if !out.contains(&t.subject.as_str()) {
                out.push(&t.subject);
            }
        }
        out
    }

    /// Conditions present anywhere in the dataset, in canonical order.
    pub fn conditions_present(&self) -> Vec<Condition> {
        Condition::ALL
            .into_iter()
            .filter(|c| self.trials.iter().any(|t| t.condition == *c))
            .collect()
    }

    pub fn trial_indices_for(&self, subject: &str) -> Vec<usize> {
        self.trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.subject == subject)
            .map(|(i, _)| i)
            .collect()
    }

    /// Completeness map: cells absent relative to `expected_per_condition`
    /// trials for every (subject, condition-present-in-dataset) pair.
    pub fn missing_cells(&self, expected_per_condition: usize) -> Vec<MissingCell> {
        let conditions = self.conditions_present();
        let mut missing = Vec::new();
        for subject in self.subjects() {
            for &condition in &conditions {
                for k in 0..expected_per_condition {
                    let present = self.trials.iter().any(|t| {
                        t.subject == subject && t.condition == condition && t.trial_index == k
                    });
                    if !present {
                        missing.push(MissingCell {
                            subject: subject.to_string(),
                            condition,
                            trial_index: k,
                        });
                    }
                }
            }
        }
        missing
    }

    /// Apply the standard preprocessing chain to every trial: zero-phase
    /// Butterworth bandpass at the trial's rate, rational resampling to
    /// `target_fs`, per-trial z-scoring of EEG channels and envelopes.
    /// Label runs are mapped onto the new sample grid.
    pub fn preprocess(
        &self,
        low_hz: f64,
        high_hz: f64,
        order: usize,
        target_fs: f64,
    ) -> Result<Dataset> {
        let trials: Result<Vec<Trial>> = self
            .trials
            .iter()
            .map(|t| {
                let eeg = crate::signal::preprocess_signal(&t.eeg, low_hz, high_hz, order, target_fs)?;
                let env = |e: &Envelope| -> Result<Envelope> {
                    let sig = crate::signal::preprocess_signal(
                        e.as_signal(),
                        low_hz,
                        high_hz,
                        order,
                        target_fs,
                    )?;
                    let mut out = Envelope::from_signal(sig)?;
                    out.exponent = e.exponent;
                    Ok(out)
                };
                let s1 = env(&t.envelopes.0)?;
                let s2 = env(&t.envelopes.1)?;

                let (up, down) = crate::signal::rational_ratio(target_fs, t.fs())?;
                let n_new = eeg.n_samples();
                let runs: Vec<(usize, u8)> = t
                    .labels
                    .to_runs()
                    .iter()
                    .map(|&(start, label)| {
                        (((start * up) as f64 / down as f64).round() as usize, label)
                    })
                    .collect();
                let labels = AttentionLabels::from_runs(&runs, n_new)?;

                Ok(Trial {
                    subject: t.subject.clone(),
                    condition: t.condition,
                    trial_index: t.trial_index,
                    eeg,
                    envelopes: (s1, s2),
                    labels,
                    origin_fs_hz: Some(t.origin_fs_hz.unwrap_or(t.fs())),
                    provenance: Some(format!(
                        "{}bandpass {low_hz}-{high_hz} Hz order {order}, resampled to {target_fs} Hz, z-scored",
                        t.provenance
                            .as_deref()
                            .map(|p| format!("{p}; "))
                            .unwrap_or_default()
                    )),
                })
            })
            .collect();
        Dataset::new(self.name.clone(), trials?)
    }

    /// Negative-control copy: each trial receives the envelope pair of the
    /// next trial (cyclically), so both candidate envelopes are unrelated to
    /// its EEG and decisions drop to chance.
    pub fn with_mismatched_envelopes(&self) -> Result<Dataset> {
        if self.trials.len() < 2 {
            return Err(Error::Plan(
                "envelope mismatch control needs at least 2 trials".into(),
            ));
        }
        let n = self.trials.len();
        let mut trials = self.trials.clone();
        for i in 0..n {
            let donor = (i + 1) % n;
            if self.trials[donor].n_samples() != self.trials[i].n_samples() {
                return Err(Error::Compatibility(format!(
                    "trials {i} and {donor} differ in length; cannot rotate envelopes"
                )));
            }
            trials[i].envelopes = self.trials[donor].envelopes.clone();
        }
        Dataset::new(format!("{}-mismatched", self.name), trials)
    }
}
