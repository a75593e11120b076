//! The on-disk container: a JSON manifest plus one float64 little-endian
//! blob per signal (time-major row order). Labels are stored as run-length
//! pairs so attention switches are explicit. Round-trips are bit-exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Condition, Dataset, Trial};
use crate::decoder::{read_f64_blob, write_f64_blob, AttentionLabels};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;

pub(crate) const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    name: String,
    trials: Vec<TrialEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialEntry {
    subject: String,
    /// Kept as a string so unknown values produce a schema error with the
    /// offending name rather than a generic serde message.
    condition: String,
    trial_index: usize,
    fs_hz: f64,
    n_samples: usize,
    n_channels: usize,
    eeg: String,
    envelope_1: String,
    envelope_2: String,
    /// Run-length label encoding: (start_sample, label).
    labels: Vec<(usize, u8)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin_fs_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    envelope_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

/// Write `dataset` as a container under `dir`, returning the manifest path.
/// Refuses to overwrite an existing manifest unless `force` is set.
pub fn save_dataset(dataset: &Dataset, dir: &Path, force: bool) -> Result<PathBuf> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!(
            "refusing to overwrite {} without force",
            manifest_path.display()
        )));
    }
    let blob_dir = dir.join("blobs");
    std::fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;

    let mut entries = Vec::with_capacity(dataset.n_trials());
    for (i, trial) in dataset.trials().iter().enumerate() {
        let eeg_rel = format!("blobs/trial_{i:04}_eeg.f64le");
        let env1_rel = format!("blobs/trial_{i:04}_env1.f64le");
        let env2_rel = format!("blobs/trial_{i:04}_env2.f64le");
        write_f64_blob(
            &dir.join(&eeg_rel),
            trial.eeg.samples().as_slice().expect("row-major owned array"),
        )?;
        write_f64_blob(&dir.join(&env1_rel), trial.envelopes.0.samples())?;
        write_f64_blob(&dir.join(&env2_rel), trial.envelopes.1.samples())?;
        entries.push(TrialEntry {
            subject: trial.subject.clone(),
            condition: trial.condition.as_str().to_string(),
            trial_index: trial.trial_index,
            fs_hz: trial.fs(),
            n_samples: trial.n_samples(),
            n_channels: trial.eeg.n_channels(),
            eeg: eeg_rel,
            envelope_1: env1_rel,
            envelope_2: env2_rel,
            labels: trial.labels.to_runs(),
            channel_labels: trial.eeg.channel_labels().map(|l| l.to_vec()),
            origin_fs_hz: trial.origin_fs_hz,
            envelope_exponent: trial.envelopes.0.exponent,
            provenance: trial.provenance.clone(),
        });
    }
    let manifest = Manifest {
        format_version: 1,
        name: dataset.name.clone(),
        trials: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Schema(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Load a container from its manifest (or the directory containing it).
/// Every blob is size-checked against the declared shape before parsing.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_NAME)
    } else {
        manifest_path.to_path_buf()
    };
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::MissingFile {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("manifest: {e}")))?;
    if manifest.format_version != 1 {
        return Err(Error::Schema(format!(
            "unsupported container format version {}",
            manifest.format_version
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let condition = Condition::parse(&entry.condition)?;
        let n = entry.n_samples;
        let c = entry.n_channels;

        let eeg_raw = read_f64_blob(&base.join(&entry.eeg), n * c)?;
        let eeg_arr = ndarray::Array2::from_shape_vec((n, c), eeg_raw)
            .expect("length checked by read_f64_blob");
        let mut eeg = MultichannelSignal::new(eeg_arr, entry.fs_hz)?;
        if let Some(labels) = &entry.channel_labels {
            eeg = eeg.with_labels(labels.clone())?;
        }

        let mut env1 =
            Envelope::from_samples(read_f64_blob(&base.join(&entry.envelope_1), n)?, entry.fs_hz)?;
        let mut env2 =
            Envelope::from_samples(read_f64_blob(&base.join(&entry.envelope_2), n)?, entry.fs_hz)?;
        env1.exponent = entry.envelope_exponent;
        env2.exponent = entry.envelope_exponent;

        let labels = AttentionLabels::from_runs(&entry.labels, n)?;
        let trial = Trial {
            subject: entry.subject.clone(),
            condition,
            trial_index: entry.trial_index,
            eeg,
            envelopes: (env1, env2),
            labels,
            origin_fs_hz: entry.origin_fs_hz,
            provenance: entry.provenance.clone(),
        };
        trial.validate()?;
        trials.push(trial);
    }
    Dataset::new(manifest.name, trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SyntheticConfig;

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            n_subjects: 2,
            duration_s: 30.0,
            trials_per_condition: 1,
            conditions: vec![Condition::NoVisuals, Condition::StaticVideo],
            n_channels: 3,
            seed: 42,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = crate::dataset::generate_synthetic(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), false).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(ds.name, loaded.name);
        assert_eq!(ds.n_trials(), loaded.n_trials());
        for (a, b) in ds.trials().iter().zip(loaded.trials()) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.condition, b.condition);
            assert_eq!(a.labels, b.labels);
            // bit-exact sample comparison
            let ab = a.eeg.samples().iter().map(|v| v.to_bits());
            let bb = b.eeg.samples().iter().map(|v| v.to_bits());
            assert!(ab.eq(bb), "EEG samples changed across the round trip");
            assert_eq!(
                a.envelopes.0.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.envelopes.0.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            );
        }
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let ds = crate::dataset::generate_synthetic(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), false).unwrap();
        match save_dataset(&ds, dir.path(), false) {
            Err(Error::Config(_)) => {}
            other => panic!("expected overwrite refusal, got {other:?}"),
        }
        assert!(save_dataset(&ds, dir.path(), true).is_ok());
    }

    #[test]
    fn truncated_blob_is_corrupt_dataset() {
        let ds = crate::dataset::generate_synthetic(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), false).unwrap();
        let blob = dir.path().join("blobs/trial_0000_eeg.f64le");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        match load_dataset(&manifest) {
            Err(Error::CorruptDataset(_)) => {}
            other => panic!("expected corrupt-dataset error, got {other:?}"),
        }
    }

    #[test]
    fn missing_blob_is_missing_file() {
        let ds = crate::dataset::generate_synthetic(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), false).unwrap();
        std::fs::remove_file(dir.path().join("blobs/trial_0001_env1.f64le")).unwrap();
        match load_dataset(&manifest) {
            Err(Error::MissingFile { .. }) => {}
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_condition_is_schema_error() {
        let ds = crate::dataset::generate_synthetic(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), false).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("no_visuals", "mystery_condition")).unwrap();
        match load_dataset(&manifest) {
            Err(Error::Schema(msg)) => assert!(msg.contains("mystery_condition")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn extra_manifest_fields_are_tolerated() {
        let ds = crate::dataset::generate_synthetic(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), false).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        let patched = text.replacen(
            "\"format_version\": 1,",
            "\"format_version\": 1, \"future_field\": {\"x\": 1},",
            1,
        );
        std::fs::write(&manifest, patched).unwrap();
        assert!(load_dataset(&manifest).is_ok());
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::new("empty", vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&ds, dir.path(), false).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.n_trials(), 0);
        assert_eq!(loaded.name, "empty");
    }

    #[test]
    fn blob_size_matches_shape_arithmetic() {
        let mut cfg = small_config();
        cfg.n_channels = 4;
        cfg.duration_s = 60.0;
        let ds = crate::dataset::generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), false).unwrap();
        let meta = std::fs::metadata(dir.path().join("blobs/trial_0000_eeg.f64le")).unwrap();
        assert_eq!(meta.len(), 60 * 20 * 4 * 8);
    }
}
