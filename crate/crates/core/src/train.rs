//! Optimization: cross-entropy loss, Adam, accuracy, leave-one-subject-out
//! orchestration, and the pretrain-then-transfer schedule. Everything is
//! bitwise deterministic for a fixed (seed, config, dataset).

use crate::data::{segment, Dataset, SplitPlan, Trial};
use crate::error::{Result, SnnError};
use crate::model::{
    build_cnn, build_snn, read_checkpoint, transfer_weights_cnn_to_snn, write_checkpoint,
    CheckpointEntry, Model, NetworkFamily, NetworkSpec, CLASSES,
};
use crate::tensor::{BnMode, NodeId, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Train the spec's own family from scratch.
    Direct,
    /// Train the conventional counterpart first, transfer, then fine-tune
    /// the spiking network.
    CnnPretrainThenSnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub schedule: Schedule,
    /// Epoch budget of the pretraining phase; defaults to `epochs`.
    pub pretrain_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: Schedule::Direct,
            pretrain_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(SnnError::Config(
                "learning rate, epochs, and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Scalar cross-entropy of logits against one-hot labels (mean over batch).
pub fn ce_loss(tape: &mut Tape, logits: NodeId, labels: &Tensor) -> Result<NodeId> {
    tape.cross_entropy_mean(logits, labels)
}

pub fn one_hot(labels: &[u8]) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), CLASSES]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * CLASSES + l as usize] = 1.0;
    }
    t
}

/// Argmax prediction with ties broken toward class 0.
pub fn predict(logits: &Tensor) -> Vec<u8> {
    logits
        .data()
        .chunks(CLASSES)
        .map(|row| {
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Fraction of matching predictions: (TP + TN) / all.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(SnnError::Contract(format!(
            "accuracy over {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-class confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fne: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fne
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn add(&mut self, prediction: u8, label: u8) {
        match (prediction, label) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            _ => self.fne += 1,
        }
    }
}

/// Per-parameter Adam accumulators.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        OptimizerState {
            m: store.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the accumulated gradients.
/// Missing gradients count as zero; the caller zeroes between steps.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (cfg.beta1 as f64).powf(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powf(t);
    for (id, p) in store.iter_mut().enumerate() {
        let g: Vec<f32> = p
            .value
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; p.value.numel()]);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SnnError::Numeric(format!(
                "non-finite gradient on parameter {}",
                p.name
            )));
        }
        let (m, v) = (&mut state.m[id], &mut state.v[id]);
        let data = p.value.data_mut();
        for i in 0..data.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] as f64 / bc1;
            let v_hat = v[i] as f64 / bc2;
            data[i] -= (cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
        }
    }
    Ok(())
}

/// Stack segmented trials into a (B, C, S, T) batch plus labels.
fn assemble_batch(
    trials: &[Trial],
    indices: &[usize],
    s: usize,
    t: usize,
) -> Result<(Tensor, Vec<u8>)> {
    let c = trials[indices[0]].signal.shape()[0];
    let mut data = Vec::with_capacity(indices.len() * c * s * t);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let seg = segment(&trials[i], s, t)?;
        data.extend_from_slice(seg.data());
        labels.push(trials[i].label);
    }
    Ok((Tensor::new(vec![indices.len(), c, s, t], data)?, labels))
}

/// One epoch record in the emitted history.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistoryRecord {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

fn epoch_rng(seed: u64, phase: &str, epoch: usize) -> ChaCha8Rng {
    let phase_tag: u64 = phase.bytes().map(|b| b as u64).sum::<u64>() << 32;
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(phase_tag)
            .wrapping_add(epoch as u64),
    )
}

/// Train `model` in place for `epochs` epochs starting at `start_epoch`,
/// evaluating on the test trials after each epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    model: &mut Model,
    opt: &mut OptimizerState,
    train_trials: &[Trial],
    train_idx: &[usize],
    test_trials_idx: (&[Trial], &[usize]),
    cfg: &TrainConfig,
    phase: &str,
    start_epoch: usize,
    epochs: usize,
    history: &mut Vec<HistoryRecord>,
) -> Result<()> {
    let (s, t) = (model.spec.timepieces, model.spec.steps);
    let (test_trials, test_idx) = test_trials_idx;
    for epoch in start_epoch..epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut epoch_rng(cfg.seed, phase, epoch));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = assemble_batch(train_trials, chunk, s, t)?;
            let targets = one_hot(&labels);
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch, BnMode::Train)?;
            let loss = ce_loss(&mut tape, out.logits, &targets)?;
            loss_sum += tape.data(loss)[0] as f64;
            batches += 1;
            tape.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&tape, &out.bound);
            adam_step(&mut model.store, opt, cfg)?;
        }
        let (acc, _) = evaluate(model, test_trials, test_idx, cfg.batch_size)?;
        history.push(HistoryRecord {
            phase: phase.to_string(),
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            test_accuracy: acc,
        });
    }
    Ok(())
}

/// Deterministic batched evaluation: accuracy plus confusion counts.
pub fn evaluate(
    model: &mut Model,
    trials: &[Trial],
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, Confusion)> {
    if indices.is_empty() {
        return Err(SnnError::Contract("evaluation over an empty split".into()));
    }
    let (s, t) = (model.spec.timepieces, model.spec.steps);
    let mut confusion = Confusion::default();
    for chunk in indices.chunks(batch_size) {
        let (batch, labels) = assemble_batch(trials, chunk, s, t)?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, BnMode::Infer)?;
        let logits = tape.tensor(out.logits);
        for (p, l) in predict(&logits).iter().zip(&labels) {
            confusion.add(*p, *l);
        }
    }
    Ok((confusion.accuracy(), confusion))
}

/// Output of one training run.
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<HistoryRecord>,
}

/// Run one leave-one-subject-out cycle under the configured schedule.
/// When `out_dir` is given, writes `model_<subject>.ckpt` (with optimizer
/// state for resuming) and appends nothing; history emission is the
/// caller's concern.
pub fn train_loop(
    spec: &NetworkSpec,
    dataset: &Dataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if spec.trial_len() != dataset.manifest.samples_per_trial {
        return Err(SnnError::Config(format!(
            "spec trial length {} does not match dataset {}",
            spec.trial_len(),
            dataset.manifest.samples_per_trial
        )));
    }
    // held-out audit: no test trial may appear on the training side
    for &i in &split.train {
        if dataset.manifest.trials[i].subject == split.held_out {
            return Err(SnnError::Contract(format!(
                "held-out subject {} leaked into the training set",
                split.held_out
            )));
        }
    }
    let trials = dataset.load_all()?;
    let mut history = Vec::new();
    let model = match cfg.schedule {
        Schedule::Direct => {
            let mut model = match spec.family {
                NetworkFamily::Snn => build_snn(spec, cfg.seed)?,
                NetworkFamily::Cnn => build_cnn(spec, cfg.seed)?,
            };
            let mut opt = OptimizerState::new(&model.store);
            train_epochs(
                &mut model,
                &mut opt,
                &trials,
                &split.train,
                (&trials, &split.test),
                cfg,
                "direct",
                0,
                cfg.epochs,
                &mut history,
            )?;
            save_final(out_dir, split, &model, &opt, cfg, "direct", cfg.epochs)?;
            model
        }
        Schedule::CnnPretrainThenSnn => {
            let mut cnn = build_cnn(spec, cfg.seed)?;
            let mut opt = OptimizerState::new(&cnn.store);
            let pre = cfg.pretrain_epochs.unwrap_or(cfg.epochs);
            train_epochs(
                &mut cnn,
                &mut opt,
                &trials,
                &split.train,
                (&trials, &split.test),
                cfg,
                "cnn",
                0,
                pre,
                &mut history,
            )?;
            let mut snn = build_snn(spec, cfg.seed)?;
            transfer_weights_cnn_to_snn(&cnn, &mut snn)?;
            let mut opt = OptimizerState::new(&snn.store);
            train_epochs(
                &mut snn,
                &mut opt,
                &trials,
                &split.train,
                (&trials, &split.test),
                cfg,
                "snn",
                0,
                cfg.epochs,
                &mut history,
            )?;
            save_final(out_dir, split, &snn, &opt, cfg, "snn", cfg.epochs)?;
            snn
        }
    };
    Ok(TrainOutcome { model, history })
}

fn save_final(
    out_dir: Option<&Path>,
    split: &SplitPlan,
    model: &Model,
    opt: &OptimizerState,
    cfg: &TrainConfig,
    phase: &str,
    epoch: usize,
) -> Result<()> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("model_{}.ckpt", split.held_out));
        save_train_checkpoint(&path, model, opt, cfg, phase, epoch)?;
    }
    Ok(())
}

/// Persist model state plus optimizer moments so training can resume.
pub fn save_train_checkpoint(
    path: &Path,
    model: &Model,
    opt: &OptimizerState,
    cfg: &TrainConfig,
    phase: &str,
    epoch: usize,
) -> Result<()> {
    let mut entries = model.checkpoint_entries();
    for (id, p) in model.store.iter().enumerate() {
        entries.push(CheckpointEntry {
            name: format!("opt.m.{}", p.name),
            shape: p.value.shape().to_vec(),
            data: opt.m[id].clone(),
        });
        entries.push(CheckpointEntry {
            name: format!("opt.v.{}", p.name),
            shape: p.value.shape().to_vec(),
            data: opt.v[id].clone(),
        });
    }
    let meta = serde_json::json!({
        "spec": model.spec,
        "phase": phase,
        "epoch": epoch,
        "opt_step": opt.step,
        "seed": cfg.seed,
    });
    write_checkpoint(path, &meta, &entries)
}

/// Restore a training checkpoint into a freshly built model.
pub fn load_train_checkpoint(
    path: &Path,
    model: &mut Model,
) -> Result<(OptimizerState, serde_json::Value)> {
    let (meta, entries) = read_checkpoint(path)?;
    model.load_entries(&entries)?;
    let mut opt = OptimizerState::new(&model.store);
    let by_name: std::collections::HashMap<&str, &CheckpointEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for (id, p) in model.store.iter().enumerate() {
        for (prefix, slot) in [("opt.m", &mut opt.m[id]), ("opt.v", &mut opt.v[id])] {
            let key = format!("{prefix}.{}", p.name);
            if let Some(e) = by_name.get(key.as_str()) {
                slot.copy_from_slice(&e.data);
            }
        }
    }
    opt.step = meta["opt_step"].as_u64().unwrap_or(0);
    Ok((opt, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionConfig, AttentionKind};
    use crate::data::{synth_generate, write_dataset};

    fn toy_setup(dir: &Path) -> (NetworkSpec, Dataset) {
        let (manifest, trials) = synth_generate(1, 2, 8, 4, 64, 0.0).unwrap();
        write_dataset(dir, &manifest, &trials).unwrap();
        let dataset = Dataset::open(dir).unwrap();
        let spec = NetworkSpec {
            family: NetworkFamily::Cnn,
            channels: 4,
            timepieces: 8,
            steps: 8,
            attention: AttentionConfig {
                kind: AttentionKind::Global,
                d1: 2,
                d2: 3,
                d: 2,
                alpha_init: 0.0,
            },
            tau: 2.0,
            v_th: 0.5,
        };
        (spec, dataset)
    }

    #[test]
    fn uniform_logits_give_ln2_loss() {
        let logits = Tensor::zeros(&[3, CLASSES]);
        let labels = one_hot(&[0, 1, 0]);
        let mut tape = Tape::new();
        let l = tape.constant(&logits);
        let loss = ce_loss(&mut tape, l, &labels).unwrap();
        assert!((tape.data(loss)[0] - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn saturated_logits_give_tiny_loss() {
        let mut logits = Tensor::zeros(&[2, CLASSES]);
        logits.data_mut().copy_from_slice(&[12.0, -12.0, -12.0, 12.0]);
        let labels = one_hot(&[0, 1]);
        let mut tape = Tape::new();
        let l = tape.constant(&logits);
        let loss = ce_loss(&mut tape, l, &labels).unwrap();
        assert!(tape.data(loss)[0] < 1e-3);
    }

    #[test]
    fn non_one_hot_labels_are_rejected() {
        let logits = Tensor::zeros(&[1, CLASSES]);
        let bad = Tensor::new(vec![1, CLASSES], vec![0.5, 0.5]).unwrap();
        let mut tape = Tape::new();
        let l = tape.constant(&logits);
        assert!(matches!(
            ce_loss(&mut tape, l, &bad),
            Err(SnnError::Contract(_))
        ));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        // tie breaks toward class 0
        let logits = Tensor::new(vec![1, 2], vec![0.25, 0.25]).unwrap();
        assert_eq!(predict(&logits), vec![0]);
    }

    #[test]
    fn confusion_counts_sum_to_total() {
        let mut c = Confusion::default();
        for (p, l) in [(0, 0), (1, 1), (1, 0), (0, 1), (1, 1)] {
            c.add(p, l);
        }
        assert_eq!(c.total(), 5);
        assert_eq!(c.tp, 2);
        assert_eq!(c.tn, 1);
        assert_eq!(c.fp, 1);
        assert_eq!(c.fne, 1);
        assert!((c.accuracy() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_grads_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let before: Vec<f32> = store.get(0).value.data().to_vec();
        let mut opt = OptimizerState::new(&store);
        let cfg = TrainConfig::default();
        store.zero_grads();
        adam_step(&mut store, &mut opt, &cfg).unwrap();
        assert_eq!(store.get(0).value.data(), &before[..]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let mut opt = OptimizerState::new(&store);
        let cfg = TrainConfig::default();
        store.get_mut(0).value.accumulate_grad(&[0.3, -0.7]);
        adam_step(&mut store, &mut opt, &cfg).unwrap();
        let d = store.get(0).value.data();
        assert!((d[0] - (1.0 - cfg.lr)).abs() < 1e-5, "{d:?}");
        assert!((d[1] - (1.0 + cfg.lr)).abs() < 1e-5, "{d:?}");
    }

    #[test]
    fn adam_rejects_non_finite_grads() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![1], vec![1.0]).unwrap());
        let mut opt = OptimizerState::new(&store);
        store.get_mut(0).value.accumulate_grad(&[f32::NAN]);
        let err = adam_step(&mut store, &mut opt, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            store.add("w", Tensor::new(vec![3], vec![0.5, -0.5, 2.0]).unwrap());
            let mut opt = OptimizerState::new(&store);
            let cfg = TrainConfig::default();
            for step in 0..5 {
                store.zero_grads();
                let g = [0.1 * step as f32, -0.2, 0.05];
                store.get_mut(0).value.accumulate_grad(&g);
                adam_step(&mut store, &mut opt, &cfg).unwrap();
            }
            store.get(0).value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn first_epoch_reduces_loss_on_clean_data() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, dataset) = toy_setup(dir.path());
        let splits = crate::data::loso_splits(&dataset.manifest).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            schedule: Schedule::Direct,
            ..TrainConfig::default()
        };
        let outcome = train_loop(&spec, &dataset, &splits[0], &cfg, None).unwrap();
        assert_eq!(outcome.history.len(), 2);
        assert!(
            outcome.history[1].train_loss < outcome.history[0].train_loss,
            "{:?}",
            outcome.history
        );
    }

    #[test]
    fn pretrain_schedule_produces_segmented_history() {
        let dir = tempfile::tempdir().unwrap();
        let (mut spec, dataset) = toy_setup(dir.path());
        spec.family = NetworkFamily::Snn;
        let splits = crate::data::loso_splits(&dataset.manifest).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            schedule: Schedule::CnnPretrainThenSnn,
            pretrain_epochs: Some(2),
            ..TrainConfig::default()
        };
        let outcome = train_loop(&spec, &dataset, &splits[0], &cfg, None).unwrap();
        let phases: Vec<&str> = outcome.history.iter().map(|h| h.phase.as_str()).collect();
        assert_eq!(phases, vec!["cnn", "cnn", "snn"]);
        assert_eq!(outcome.model.spec.family, NetworkFamily::Snn);
    }

    #[test]
    fn leaked_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, dataset) = toy_setup(dir.path());
        let mut splits = crate::data::loso_splits(&dataset.manifest).unwrap();
        // leak one held-out trial into training
        let leak = splits[0].test[0];
        splits[0].train.push(leak);
        let err = match train_loop(&spec, &dataset, &splits[0], &TrainConfig::default(), None) {
            Err(e) => e,
            Ok(_) => panic!("leaked split must be rejected"),
        };
        assert!(matches!(err, SnnError::Contract(_)), "{err}");
    }

    #[test]
    fn training_is_bitwise_deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, dataset) = toy_setup(dir.path());
        let splits = crate::data::loso_splits(&dataset.manifest).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            schedule: Schedule::Direct,
            ..TrainConfig::default()
        };
        let run = |_: u32| {
            let trials = dataset.load_all().unwrap();
            let mut model = build_cnn(&spec, cfg.seed).unwrap();
            let mut opt = OptimizerState::new(&model.store);
            let mut history = Vec::new();
            train_epochs(
                &mut model,
                &mut opt,
                &trials,
                &splits[0].train,
                (&trials, &splits[0].test),
                &cfg,
                "direct",
                0,
                2,
                &mut history,
            )
            .unwrap();
            (model, opt, history)
        };
        let (m1, _, h1) = run(0);
        let (m2, _, h2) = run(1);
        assert_eq!(h1, h2);
        for id in 0..m1.store.len() {
            assert_eq!(m1.store.get(id).value.data(), m2.store.get(id).value.data());
        }

        // stop after epoch 0, checkpoint, resume epoch 1: same final params
        let trials = dataset.load_all().unwrap();
        let mut model = build_cnn(&spec, cfg.seed).unwrap();
        let mut opt = OptimizerState::new(&model.store);
        let mut history = Vec::new();
        train_epochs(
            &mut model,
            &mut opt,
            &trials,
            &splits[0].train,
            (&trials, &splits[0].test),
            &cfg,
            "direct",
            0,
            1,
            &mut history,
        )
        .unwrap();
        let ckpt = dir.path().join("mid.ckpt");
        save_train_checkpoint(&ckpt, &model, &opt, &cfg, "direct", 1).unwrap();
        let mut resumed = build_cnn(&spec, cfg.seed).unwrap();
        let (mut opt2, meta) = load_train_checkpoint(&ckpt, &mut resumed).unwrap();
        assert_eq!(meta["epoch"], 1);
        train_epochs(
            &mut resumed,
            &mut opt2,
            &trials,
            &splits[0].train,
            (&trials, &splits[0].test),
            &cfg,
            "direct",
            1,
            2,
            &mut history,
        )
        .unwrap();
        for id in 0..m1.store.len() {
            assert_eq!(
                m1.store.get(id).value.data(),
                resumed.store.get(id).value.data(),
                "param {}",
                m1.store.get(id).name
            );
        }
    }
}
