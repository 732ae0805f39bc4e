//! Dataset handling: a bit-exact native store, CSV import, downsampling,
//! timepiece segmentation, leave-one-subject-out splitting, and a seeded
//! synthetic generator for desk-scale experiments.
//!
//! Native store layout: one directory holding `manifest.json` plus one raw
//! file per trial named `<subject>_<trial>.f32` containing little-endian
//! 32-bit reals, row-major channels x samples.

use crate::error::{Result, SnnError};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubjectInfo {
    pub id: String,
    pub trial_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrialMeta {
    pub subject: String,
    pub trial_id: String,
    pub label: u8,
    pub file: String,
}

/// Parameters of the injected synthetic signal, kept so downstream checks
/// can locate the discriminative window.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthInfo {
    pub window_start: usize,
    pub window_len: usize,
    pub active_channels: usize,
    pub cycles_class0: f64,
    pub cycles_class1: f64,
    pub difficulty: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    /// Channel extent C.
    pub channels: usize,
    /// Samples per trial D.
    pub samples_per_trial: usize,
    /// Informational sample rate.
    pub sample_rate_hz: f64,
    /// Recorded downsampling method, when one was applied.
    pub downsample: Option<String>,
    pub subjects: Vec<SubjectInfo>,
    pub trials: Vec<TrialMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthInfo>,
}

/// One recorded trial: subject, class label, and the C x D signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject: String,
    pub trial_id: String,
    pub label: u8,
    pub signal: Tensor,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.samples_per_trial == 0 {
            return Err(SnnError::Ingest(
                "manifest declares zero channel or sample extent".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &self.trials {
            if t.label > 1 {
                return Err(SnnError::Ingest(format!(
                    "trial {} has label {} outside {{0,1}}",
                    t.trial_id, t.label
                )));
            }
            if !seen.insert((t.subject.as_str(), t.trial_id.as_str())) {
                return Err(SnnError::Ingest(format!(
                    "duplicate trial id {} for subject {}",
                    t.trial_id, t.subject
                )));
            }
            *counts.entry(t.subject.as_str()).or_default() += 1;
        }
        for s in &self.subjects {
            let got = counts.get(s.id.as_str()).copied().unwrap_or(0);
            if got != s.trial_count {
                return Err(SnnError::Ingest(format!(
                    "subject {} declares {} trials but {} are listed",
                    s.id, s.trial_count, got
                )));
            }
        }
        Ok(())
    }
}

/// A dataset opened from its directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| SnnError::Ingest(format!("cannot read manifest.json: {e}")))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| SnnError::Ingest(format!("malformed manifest.json: {e}")))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(SnnError::Ingest(format!(
                "manifest version {} unsupported (want {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        manifest.validate()?;
        Ok(Dataset {
            manifest,
            root: dir.to_path_buf(),
        })
    }

    pub fn load_trial(&self, meta: &TrialMeta) -> Result<Trial> {
        let path = self.root.join(&meta.file);
        let mut bytes = Vec::new();
        std::fs::File::open(&path)
            .map_err(|e| SnnError::Ingest(format!("cannot open {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        let want = self.manifest.channels * self.manifest.samples_per_trial * 4;
        if bytes.len() != want {
            return Err(SnnError::Ingest(format!(
                "{} holds {} bytes, expected {want}",
                path.display(),
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(SnnError::Ingest(format!(
                    "{} has a non-finite value at channel {}, sample {}",
                    path.display(),
                    i / self.manifest.samples_per_trial,
                    i % self.manifest.samples_per_trial
                )));
            }
        }
        Ok(Trial {
            subject: meta.subject.clone(),
            trial_id: meta.trial_id.clone(),
            label: meta.label,
            signal: Tensor::new(
                vec![self.manifest.channels, self.manifest.samples_per_trial],
                data,
            )?,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Trial>> {
        self.manifest
            .trials
            .iter()
            .map(|m| self.load_trial(m))
            .collect()
    }
}

/// Write a dataset (manifest plus trial payloads) into `dir`.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, trials: &[Trial]) -> Result<()> {
    manifest.validate()?;
    if trials.len() != manifest.trials.len() {
        return Err(SnnError::Ingest(format!(
            "{} trials given, manifest lists {}",
            trials.len(),
            manifest.trials.len()
        )));
    }
    std::fs::create_dir_all(dir)?;
    for (meta, trial) in manifest.trials.iter().zip(trials) {
        let mut bytes = Vec::with_capacity(trial.signal.numel() * 4);
        for v in trial.signal.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(dir.join(&meta.file))?;
        f.write_all(&bytes)?;
    }
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn trial_file_name(subject: &str, trial_id: &str) -> String {
    format!("{subject}_{trial_id}.f32")
}

// ---- CSV import ---------------------------------------------------------

/// Declaration sitting next to the per-trial CSV files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportSpec {
    pub name: String,
    pub channels: usize,
    pub samples_per_trial: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    pub trials: Vec<ImportTrial>,
}

fn default_rate() -> f64 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportTrial {
    pub subject: String,
    pub trial_id: String,
    pub label: u8,
    pub file: String,
}

/// Ingest a directory of per-trial CSV files (C rows x D comma-separated
/// decimal columns) described by `import.json`, writing the native store
/// into `dest`.
pub fn import_csv(src: &Path, dest: &Path) -> Result<DatasetManifest> {
    let spec_path = src.join("import.json");
    let text = std::fs::read_to_string(&spec_path)
        .map_err(|e| SnnError::Ingest(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: ImportSpec = serde_json::from_str(&text)
        .map_err(|e| SnnError::Ingest(format!("malformed import.json: {e}")))?;
    let (c, d) = (spec.channels, spec.samples_per_trial);
    let mut trials = Vec::new();
    let mut metas = Vec::new();
    for t in &spec.trials {
        let path = src.join(&t.file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SnnError::Ingest(format!("cannot read {}: {e}", path.display())))?;
        let mut data = Vec::with_capacity(c * d);
        let mut rows = 0usize;
        for (ri, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != d {
                return Err(SnnError::Ingest(format!(
                    "{}: row {} has {} columns, expected {d}",
                    t.file,
                    ri + 1,
                    cols.len()
                )));
            }
            for (ci, col) in cols.iter().enumerate() {
                let v: f32 = col.trim().parse().map_err(|_| {
                    SnnError::Ingest(format!(
                        "{}: row {}, column {} is not a decimal real: {col:?}",
                        t.file,
                        ri + 1,
                        ci + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(SnnError::Ingest(format!(
                        "{}: non-finite value at row {}, column {}",
                        t.file,
                        ri + 1,
                        ci + 1
                    )));
                }
                data.push(v);
            }
        }
        if rows != c {
            return Err(SnnError::Ingest(format!(
                "{}: {} rows, expected {c}",
                t.file, rows
            )));
        }
        trials.push(Trial {
            subject: t.subject.clone(),
            trial_id: t.trial_id.clone(),
            label: t.label,
            signal: Tensor::new(vec![c, d], data)?,
        });
        metas.push(TrialMeta {
            subject: t.subject.clone(),
            trial_id: t.trial_id.clone(),
            label: t.label,
            file: trial_file_name(&t.subject, &t.trial_id),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        name: spec.name,
        channels: c,
        samples_per_trial: d,
        sample_rate_hz: spec.sample_rate_hz,
        downsample: None,
        subjects: subject_counts(&metas),
        trials: metas,
        synth: None,
    };
    write_dataset(dest, &manifest, &trials)?;
    Ok(manifest)
}

fn subject_counts(trials: &[TrialMeta]) -> Vec<SubjectInfo> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in trials {
        *counts.entry(t.subject.clone()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(id, trial_count)| SubjectInfo { id, trial_count })
        .collect()
}

// ---- transforms ----------------------------------------------------------

/// Uniform index selection down to `target_d` samples: pick
/// `round(i * D / target_d)` for each output index.
pub fn downsample(trial: &Trial, target_d: usize) -> Result<Trial> {
    let shape = trial.signal.shape();
    let (c, d) = (shape[0], shape[1]);
    if target_d > d || target_d == 0 {
        return Err(SnnError::Contract(format!(
            "downsample target {target_d} outside 1..={d}"
        )));
    }
    let mut data = Vec::with_capacity(c * target_d);
    for ci in 0..c {
        let row = &trial.signal.data()[ci * d..(ci + 1) * d];
        for i in 0..target_d {
            let idx = ((i as f64 * d as f64 / target_d as f64).round() as usize).min(d - 1);
            data.push(row[idx]);
        }
    }
    Ok(Trial {
        subject: trial.subject.clone(),
        trial_id: trial.trial_id.clone(),
        label: trial.label,
        signal: Tensor::new(vec![c, target_d], data)?,
    })
}

/// Cut a (C, D) trial into S contiguous timepieces of T steps: (C, S, T).
/// Timepiece s covers samples [s*T, (s+1)*T).
pub fn segment(trial: &Trial, s: usize, t: usize) -> Result<Tensor> {
    let shape = trial.signal.shape();
    let (c, d) = (shape[0], shape[1]);
    if s * t != d {
        return Err(SnnError::Config(format!(
            "segmentation S*T = {}*{} does not equal trial length {d}",
            s, t
        )));
    }
    Tensor::new(vec![c, s, t], trial.signal.data().to_vec())
}

// ---- leave-one-subject-out -----------------------------------------------

/// One evaluation cycle: the held-out subject's trials form the test set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub held_out: String,
    /// Indices into the manifest's trial list.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One split per subject, ordered by subject id.
pub fn loso_splits(manifest: &DatasetManifest) -> Result<Vec<SplitPlan>> {
    if manifest.subjects.len() < 2 {
        return Err(SnnError::Contract(
            "leave-one-subject-out needs at least two subjects".into(),
        ));
    }
    let mut ids: Vec<&str> = manifest.subjects.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    Ok(ids
        .into_iter()
        .map(|held| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, t) in manifest.trials.iter().enumerate() {
                if t.subject == held {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            SplitPlan {
                held_out: held.to_string(),
                train,
                test,
            }
        })
        .collect())
}

// ---- synthetic generator ---------------------------------------------------

/// Deterministic two-class synthetic dataset. Each class carries a
/// band-limited oscillation (class-specific cycle count) inside one fixed
/// contiguous window covering a quarter of the trial, on the first C/2
/// channels. Subjects differ by a gain factor; `difficulty` scales additive
/// Gaussian noise (0 means clean). Labels alternate within each subject, so
/// per-subject counts differ by at most one.
pub fn synth_generate(
    seed: u64,
    n_subjects: usize,
    trials_per_subject: usize,
    c: usize,
    d: usize,
    difficulty: f64,
) -> Result<(DatasetManifest, Vec<Trial>)> {
    if n_subjects == 0 || trials_per_subject == 0 || c == 0 || d == 0 {
        return Err(SnnError::Config("synthetic extents must be positive".into()));
    }
    let window_len = d / 4;
    let window_start = (2 * d) / 5;
    let active = (c / 2).max(1);
    let (cycles0, cycles1) = (2.0f64, 5.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::new();
    let mut metas = Vec::new();
    for subj in 0..n_subjects {
        let subject = format!("s{:02}", subj + 1);
        let gain = 1.0 + 0.2 * (rng.gen::<f64>() - 0.5);
        for k in 0..trials_per_subject {
            let label = (k % 2) as u8;
            let cycles = if label == 0 { cycles0 } else { cycles1 };
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            let mut data = vec![0.0f32; c * d];
            for ci in 0..c {
                for di in 0..d {
                    let mut v = 0.0f64;
                    if ci < active && di >= window_start && di < window_start + window_len {
                        let u = (di - window_start) as f64 / window_len as f64;
                        v = gain * (std::f64::consts::TAU * cycles * u + phase).sin();
                    }
                    if difficulty > 0.0 {
                        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                        // Box-Muller
                        let n = (-2.0 * a.max(1e-12).ln()).sqrt()
                            * (std::f64::consts::TAU * b).cos();
                        v += difficulty * n;
                    }
                    data[ci * d + di] = v as f32;
                }
            }
            let trial_id = format!("t{:03}", k + 1);
            metas.push(TrialMeta {
                subject: subject.clone(),
                trial_id: trial_id.clone(),
                label,
                file: trial_file_name(&subject, &trial_id),
            });
            trials.push(Trial {
                subject: subject.clone(),
                trial_id,
                label,
                signal: Tensor::new(vec![c, d], data)?,
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        name: format!("synth-{seed}"),
        channels: c,
        samples_per_trial: d,
        sample_rate_hz: 0.0,
        downsample: None,
        subjects: subject_counts(&metas),
        trials: metas,
        synth: Some(SynthInfo {
            window_start,
            window_len,
            active_channels: active,
            cycles_class0: cycles0,
            cycles_class1: cycles1,
            difficulty,
            seed,
        }),
    };
    Ok((manifest, trials))
}

/// Windowed band power of a trial at `cycles` cycles per window, averaged
/// over the active channels. Independent oracle for the synthetic classes.
pub fn synth_band_power(trial: &Trial, info: &SynthInfo, cycles: f64) -> f64 {
    let d = trial.signal.shape()[1];
    let (w0, wl) = (info.window_start, info.window_len);
    let mut power = 0.0f64;
    for ci in 0..info.active_channels {
        let row = &trial.signal.data()[ci * d..(ci + 1) * d];
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for i in 0..wl {
            let u = i as f64 / wl as f64;
            let ang = std::f64::consts::TAU * cycles * u;
            let v = row[w0 + i] as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        power += (re * re + im * im) / (wl as f64 * wl as f64);
    }
    power / info.active_channels as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_trials() -> (DatasetManifest, Vec<Trial>) {
        synth_generate(7, 2, 2, 3, 12, 0.0).unwrap()
    }

    #[test]
    fn native_store_round_trips_losslessly() {
        let (manifest, trials) = toy_trials();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &manifest, &trials).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, manifest);
        let loaded = ds.load_all().unwrap();
        assert_eq!(loaded, trials);
        // writing again produces identical bytes
        let before = std::fs::read(dir.path().join("manifest.json")).unwrap();
        write_dataset(dir.path(), &manifest, &trials).unwrap();
        assert_eq!(before, std::fs::read(dir.path().join("manifest.json")).unwrap());
    }

    #[test]
    fn csv_import_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir_all(&src).unwrap();
        let spec = serde_json::json!({
            "name": "toy",
            "channels": 3,
            "samples_per_trial": 4,
            "sample_rate_hz": 250.0,
            "trials": [
                {"subject": "a", "trial_id": "t1", "label": 0, "file": "a1.csv"},
                {"subject": "b", "trial_id": "t1", "label": 1, "file": "b1.csv"},
            ]
        });
        std::fs::write(src.join("import.json"), spec.to_string()).unwrap();
        std::fs::write(src.join("a1.csv"), "1,2,3,4\n5,6,7,8\n9,10,11,12\n").unwrap();
        std::fs::write(src.join("b1.csv"), "0.5,-1.5,2.25,3\n1,1,1,1\n0,0,0,0\n").unwrap();
        let dest = dir.path().join("store");
        let manifest = import_csv(&src, &dest).unwrap();
        let ds = Dataset::open(&dest).unwrap();
        let trials = ds.load_all().unwrap();
        assert_eq!(manifest.trials.len(), 2);
        assert_eq!(
            trials[0].signal.data(),
            &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]
        );
        assert_eq!(trials[1].signal.data()[1], -1.5);
    }

    #[test]
    fn csv_import_names_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir_all(&src).unwrap();
        let spec = serde_json::json!({
            "name": "bad",
            "channels": 2,
            "samples_per_trial": 3,
            "trials": [{"subject": "a", "trial_id": "t1", "label": 0, "file": "short.csv"}]
        });
        std::fs::write(src.join("import.json"), spec.to_string()).unwrap();
        std::fs::write(src.join("short.csv"), "1,2\n3,4\n").unwrap();
        let err = import_csv(&src, &dir.path().join("dst")).unwrap_err();
        assert!(err.to_string().contains("short.csv"), "{err}");
    }

    #[test]
    fn duplicate_trial_ids_are_rejected() {
        let (mut manifest, trials) = toy_trials();
        manifest.trials[1].trial_id = manifest.trials[0].trial_id.clone();
        let dir = tempfile::tempdir().unwrap();
        let err = write_dataset(dir.path(), &manifest, &trials).unwrap_err();
        assert!(matches!(err, SnnError::Ingest(_)), "{err}");
    }

    #[test]
    fn downsample_uniform_stride() {
        let trial = Trial {
            subject: "s".into(),
            trial_id: "t".into(),
            label: 0,
            signal: Tensor::new(vec![1, 8], (0..8).map(|v| v as f32).collect()).unwrap(),
        };
        let down = downsample(&trial, 4).unwrap();
        assert_eq!(down.signal.data(), &[0.0, 2.0, 4.0, 6.0]);
        let same = downsample(&trial, 8).unwrap();
        assert_eq!(same.signal.data(), trial.signal.data());
        let constant = Trial {
            signal: Tensor::new(vec![1, 8], vec![3.5; 8]).unwrap(),
            ..trial.clone()
        };
        assert!(downsample(&constant, 5)
            .unwrap()
            .signal
            .data()
            .iter()
            .all(|&v| v == 3.5));
        assert!(downsample(&trial, 9).is_err());
    }

    #[test]
    fn segmentation_is_a_partition() {
        let (_, trials) = toy_trials();
        let seg = segment(&trials[0], 3, 4).unwrap();
        assert_eq!(seg.shape(), &[3, 3, 4]);
        // flattening reproduces the trial bitwise
        assert_eq!(seg.data(), trials[0].signal.data());
        let whole = segment(&trials[0], 1, 12).unwrap();
        assert_eq!(whole.shape(), &[3, 1, 12]);
        assert!(segment(&trials[0], 5, 3).is_err());
    }

    #[test]
    fn loso_partitions_by_subject() {
        let (manifest, _) = synth_generate(3, 3, 4, 2, 8, 0.0).unwrap();
        let plans = loso_splits(&manifest).unwrap();
        assert_eq!(plans.len(), 3);
        let total = manifest.trials.len();
        for plan in &plans {
            assert_eq!(plan.train.len() + plan.test.len(), total);
            for &i in &plan.test {
                assert_eq!(manifest.trials[i].subject, plan.held_out);
            }
            for &i in &plan.train {
                assert_ne!(manifest.trials[i].subject, plan.held_out);
            }
            // no overlap
            let mut all: Vec<usize> = plan.train.iter().chain(&plan.test).copied().collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), total);
        }
        // every other plan trains on plan k's test subject
        for k in 0..plans.len() {
            for (j, other) in plans.iter().enumerate() {
                if j != k {
                    assert!(other
                        .train
                        .iter()
                        .any(|&i| manifest.trials[i].subject == plans[k].held_out));
                }
            }
        }
        let (single, _) = synth_generate(3, 1, 4, 2, 8, 0.0).unwrap();
        assert!(loso_splits(&single).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let (m1, t1) = synth_generate(42, 3, 5, 4, 16, 0.3).unwrap();
        let (m2, t2) = synth_generate(42, 3, 5, 4, 16, 0.3).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
        for s in &m1.subjects {
            let (mut zeros, mut ones) = (0i64, 0i64);
            for t in m1.trials.iter().filter(|t| t.subject == s.id) {
                if t.label == 0 {
                    zeros += 1
                } else {
                    ones += 1
                }
            }
            assert!((zeros - ones).abs() <= 1);
        }
        let (m3, _) = synth_generate(43, 3, 5, 4, 16, 0.3).unwrap();
        assert_ne!(m1.name, m3.name);
    }

    #[test]
    fn clean_synth_is_separable_by_band_power_oracle() {
        let (manifest, trials) = synth_generate(9, 3, 20, 6, 80, 0.0).unwrap();
        let info = manifest.synth.as_ref().unwrap();
        let mut correct = 0;
        for t in &trials {
            let p0 = synth_band_power(t, info, info.cycles_class0);
            let p1 = synth_band_power(t, info, info.cycles_class1);
            let pred = if p1 > p0 { 1 } else { 0 };
            if pred == t.label {
                correct += 1;
            }
        }
        assert_eq!(correct, trials.len(), "threshold oracle must be perfect");
    }
}
