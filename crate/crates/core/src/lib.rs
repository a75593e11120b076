//! Linear stimulus reconstruction for auditory attention decoding (AAD).
//!
//! The pipeline decodes which of two competing speakers a listener attends to
//! from multichannel EEG: a spatio-temporal backward model reconstructs the
//! attended speech envelope from time-lagged EEG, and Pearson correlation
//! against the two candidate envelopes decides the attended one per decision
//! window. The crate covers preprocessing (zero-phase 1-9 Hz bandpass,
//! rational resampling, per-trial z-scoring), envelope extraction (gammatone
//! filterbank + powerlaw compression), decoder training with Ledoit-Wolf
//! covariance shrinkage, decision statistics with binomial significance
//! thresholds, a documented dataset container with a deterministic synthetic
//! forward-model generator, and the cross-validation protocols
//! (leave-one-trial/condition/subject-out and cross-dataset).

pub mod dataset;
pub mod decision;
pub mod decoder;
pub mod envelope;
pub mod error;
pub mod evaluation;
pub mod signal;

pub use error::{Error, ErrorClass, Result};
