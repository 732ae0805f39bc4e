//! Command-line entry point for the spiking-network engine.
//!
//! Verbs: `verify`, `train`, `eval`, `profile`, `export-attention`,
//! `synth`, `import`. Exit codes: 0 success, 1 property or acceptance
//! failure, 2 configuration error, 3 data error. Every command is
//! deterministic for fixed inputs and overwrites its outputs with
//! byte-identical content when rerun.

mod config;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use config::RunConfig;
use snn_core::checks;
use snn_core::data::{import_csv, loso_splits, synth_generate, write_dataset, Dataset};
use snn_core::model::{build_cnn, build_snn, read_checkpoint, Model, NetworkFamily};
use snn_core::profiler::{measure_spike_rates, profile_static, render_report, ReportFormat};
use snn_core::tensor::{BnMode, Tape, Tensor};
use snn_core::train::{evaluate, train_loop, HistoryRecord, TrainOutcome};
use snn_core::SnnError;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "snn", version, about = "Spiking network engine: train, verify, profile")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the executable property suites and print a pass/fail table.
    Verify {
        /// Restrict to one suite (props1, nofire, gradients, autodiff,
        /// attention, profiler, sparsity, data).
        #[arg(long)]
        suite: Option<String>,
        /// Also validate an on-disk dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train under the configured schedule on one or all held-out subjects.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Held-out subject id, or "all" for the full cycle.
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one held-out subject's trials.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: String,
    },
    /// Static cost report; with a checkpoint and dataset, measured spike
    /// rates and energy.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one trial's signals, encoder spike raster, and attention
    /// scores as CSV files for external plotting.
    ExportAttention {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trial id, optionally qualified as subject/trial.
        #[arg(long)]
        trial: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic two-class dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        subjects: usize,
        #[arg(long, default_value_t = 60)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        channels: usize,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 0.0)]
        difficulty: f64,
    },
    /// Ingest per-trial CSV files into the native store.
    Import {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            classify(&e)
        }
    };
    std::process::exit(code);
}

/// 2 for configuration problems, 3 for data problems.
fn classify(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(snn) = cause.downcast_ref::<SnnError>() {
            return match snn {
                SnnError::Ingest(_) | SnnError::Io(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    2
}

fn run(cmd: Cmd) -> anyhow::Result<i32> {
    match cmd {
        Cmd::Verify { suite, data } => cmd_verify(suite.as_deref(), data.as_deref()),
        Cmd::Train {
            config,
            split,
            seed,
            out,
        } => cmd_train(&config, &split, seed, out),
        Cmd::Eval {
            config,
            checkpoint,
            split,
        } => cmd_eval(&config, &checkpoint, &split),
        Cmd::Profile {
            config,
            checkpoint,
            out,
        } => cmd_profile(&config, checkpoint.as_deref(), out),
        Cmd::ExportAttention {
            config,
            checkpoint,
            trial,
            out,
        } => cmd_export_attention(&config, &checkpoint, &trial, out),
        Cmd::Synth {
            out,
            seed,
            subjects,
            trials,
            channels,
            samples,
            difficulty,
        } => cmd_synth(&out, seed, subjects, trials, channels, samples, difficulty),
        Cmd::Import { src, out } => cmd_import(&src, &out),
    }
}

fn cmd_verify(suite: Option<&str>, data: Option<&Path>) -> anyhow::Result<i32> {
    let mut results = checks::run_suites(suite)?;
    if let Some(dir) = data {
        checks::check_dataset_dir(dir, &mut results);
    }
    let mut all_ok = true;
    println!("{:<6} {:<10} {:<40} detail", "status", "suite", "check");
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        all_ok &= r.passed;
        println!("{status:<6} {:<10} {:<40} {}", r.suite, r.name, r.detail);
    }
    println!(
        "{} checks, {} failed",
        results.len(),
        results.iter().filter(|r| !r.passed).count()
    );
    Ok(if all_ok { 0 } else { 1 })
}

fn build_model(cfg: &RunConfig, seed: u64) -> anyhow::Result<Model> {
    Ok(match cfg.spec.family {
        NetworkFamily::Snn => build_snn(&cfg.spec, seed)?,
        NetworkFamily::Cnn => build_cnn(&cfg.spec, seed)?,
    })
}

fn open_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let dir = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!(SnnError::Config("config has no data.dataset path".into())))?;
    Ok(Dataset::open(dir)?)
}

fn cmd_train(
    config: &Path,
    split: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o);
    }
    let dataset = open_dataset(&cfg)?;
    let plans = loso_splits(&dataset.manifest)?;
    let selected: Vec<_> = if split == "all" {
        plans.iter().collect()
    } else {
        let one = plans
            .iter()
            .find(|p| p.held_out == split)
            .ok_or_else(|| anyhow!(SnnError::Config(format!("no subject named {split}"))))?;
        vec![one]
    };
    let out_dir = cfg.out_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut summary = Vec::new();
    for plan in selected {
        let TrainOutcome { model, history } =
            train_loop(&cfg.spec, &dataset, plan, &cfg.train, out_dir.as_deref())?;
        let accuracy = history.last().map(|h| h.test_accuracy).unwrap_or(0.0);
        if let Some(dir) = &out_dir {
            write_history(&dir.join(format!("history_{}.jsonl", plan.held_out)), &history)?;
        }
        println!(
            "split {}: final {} test accuracy {:.4} over {} epochs",
            plan.held_out,
            match model.spec.family {
                NetworkFamily::Snn => "snn",
                NetworkFamily::Cnn => "cnn",
            },
            accuracy,
            history.len()
        );
        summary.push((plan.held_out.clone(), accuracy));
    }
    let mean = summary.iter().map(|(_, a)| a).sum::<f64>() / summary.len() as f64;
    println!("mean accuracy over {} split(s): {mean:.4}", summary.len());
    if let Some(dir) = &out_dir {
        let json = serde_json::json!({
            "splits": summary
                .iter()
                .map(|(s, a)| serde_json::json!({"subject": s, "accuracy": a}))
                .collect::<Vec<_>>(),
            "mean_accuracy": mean,
        });
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&json)?)?;
    }
    Ok(0)
}

fn write_history(path: &Path, history: &[HistoryRecord]) -> anyhow::Result<()> {
    let mut text = String::new();
    for h in history {
        text.push_str(&serde_json::to_string(h)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_model_from_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<Model> {
    let (_meta, entries) = read_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let mut model = build_model(cfg, cfg.train.seed)?;
    model.load_entries(&entries)?;
    Ok(model)
}

fn cmd_eval(config: &Path, checkpoint: &Path, split: &str) -> anyhow::Result<i32> {
    let cfg = RunConfig::load(config)?;
    let dataset = open_dataset(&cfg)?;
    let plans = loso_splits(&dataset.manifest)?;
    let plan = plans
        .iter()
        .find(|p| p.held_out == split)
        .ok_or_else(|| anyhow!(SnnError::Config(format!("no subject named {split}"))))?;
    let mut model = load_model_from_checkpoint(&cfg, checkpoint)?;
    let trials = dataset.load_all()?;
    let (acc, confusion) = evaluate(&mut model, &trials, &plan.test, cfg.train.batch_size)?;
    println!(
        "subject {}: accuracy {:.4} | tp {} tn {} fp {} fn {}",
        split, acc, confusion.tp, confusion.tn, confusion.fp, confusion.fne
    );
    Ok(0)
}

fn cmd_profile(
    config: &Path,
    checkpoint: Option<&Path>,
    out: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let cfg = RunConfig::load(config)?;
    let report = match checkpoint {
        None => {
            let model = build_model(&cfg, cfg.train.seed)?;
            profile_static(&model)
        }
        Some(ckpt) => {
            let mut model = load_model_from_checkpoint(&cfg, ckpt)?;
            let dataset = open_dataset(&cfg)?;
            let trials = dataset.load_all()?;
            let indices: Vec<usize> = (0..trials.len()).collect();
            let mut batches = Vec::new();
            for chunk in indices.chunks(cfg.train.batch_size) {
                batches.push(stack_batch(&trials, chunk, &cfg)?);
            }
            measure_spike_rates(&mut model, &batches)?
        }
    };
    print!("{}", render_report(&report, ReportFormat::Table));
    let out_dir = out.or(cfg.out_dir);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("profile.jsonl"),
            render_report(&report, ReportFormat::JsonLines),
        )?;
    }
    Ok(0)
}

fn stack_batch(
    trials: &[snn_core::data::Trial],
    indices: &[usize],
    cfg: &RunConfig,
) -> anyhow::Result<Tensor> {
    let (s, t) = (cfg.spec.timepieces, cfg.spec.steps);
    let c = cfg.spec.channels;
    let mut data = Vec::with_capacity(indices.len() * c * s * t);
    for &i in indices {
        let seg = snn_core::data::segment(&trials[i], s, t)?;
        data.extend_from_slice(seg.data());
    }
    Ok(Tensor::new(vec![indices.len(), c, s, t], data)?)
}

fn cmd_export_attention(
    config: &Path,
    checkpoint: &Path,
    trial_ref: &str,
    out: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let cfg = RunConfig::load(config)?;
    let dataset = open_dataset(&cfg)?;
    let meta = dataset
        .manifest
        .trials
        .iter()
        .find(|t| {
            trial_ref == format!("{}/{}", t.subject, t.trial_id) || trial_ref == t.trial_id
        })
        .ok_or_else(|| anyhow!(SnnError::Config(format!("no trial named {trial_ref}"))))?
        .clone();
    let trial = dataset.load_trial(&meta)?;
    let mut model = load_model_from_checkpoint(&cfg, checkpoint)?;
    let batch = stack_batch(&[trial.clone()], &[0], &cfg)?;
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &batch, BnMode::Infer)?;

    let dir = out
        .or(cfg.out_dir)
        .unwrap_or_else(|| PathBuf::from("attention-export"));
    std::fs::create_dir_all(&dir)?;

    // raw input signals, one row per channel
    let (c, d) = (cfg.spec.channels, cfg.spec.trial_len());
    let mut text = String::new();
    for ci in 0..c {
        let row = &trial.signal.data()[ci * d..(ci + 1) * d];
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(dir.join("input_signals.csv"), text)?;

    // channel-mean signal
    let mut means = vec![0.0f64; d];
    for ci in 0..c {
        for (j, m) in means.iter_mut().enumerate() {
            *m += trial.signal.data()[ci * d + j] as f64;
        }
    }
    let cells: Vec<String> = means.iter().map(|m| (m / c as f64).to_string()).collect();
    std::fs::write(dir.join("channel_mean.csv"), cells.join(",") + "\n")?;

    // post-encoder spike raster with coordinates
    if let Some(spikes) = fwd.encoder_spikes {
        let shape = tape.shape(spikes).to_vec();
        let (s_ext, t_ext) = (shape[2], shape[3]);
        let mut text = String::from("channel,timepiece,step,spike\n");
        let data = tape.data(spikes);
        for ci in 0..shape[1] {
            for si in 0..s_ext {
                for ti in 0..t_ext {
                    let v = data[(ci * s_ext + si) * t_ext + ti];
                    text.push_str(&format!("{ci},{si},{ti},{v}\n"));
                }
            }
        }
        std::fs::write(dir.join("spike_raster.csv"), text)?;
    }

    // attention scores in their native shape, one coordinate tuple per line
    if let Some(scores) = fwd.attention_scores {
        let shape = tape.shape(scores).to_vec();
        let data = tape.data(scores);
        let dims: Vec<String> = (0..shape.len()).map(|i| format!("dim{i}")).collect();
        let mut text = format!("{},score\n", dims.join(","));
        let mut coords = vec![0usize; shape.len()];
        for (flat, v) in data.iter().enumerate() {
            let mut rem = flat;
            for i in (0..shape.len()).rev() {
                coords[i] = rem % shape[i];
                rem /= shape[i];
            }
            let cells: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            text.push_str(&format!("{},{v}\n", cells.join(",")));
        }
        std::fs::write(dir.join("attention_scores.csv"), text)?;
    } else {
        bail!(SnnError::Config(
            "configured network has no attention layer to export".into()
        ));
    }
    println!("exported trial {trial_ref} to {}", dir.display());
    Ok(0)
}

fn cmd_synth(
    out: &Path,
    seed: u64,
    subjects: usize,
    trials: usize,
    channels: usize,
    samples: usize,
    difficulty: f64,
) -> anyhow::Result<i32> {
    let (manifest, trial_data) =
        synth_generate(seed, subjects, trials, channels, samples, difficulty)?;
    write_dataset(out, &manifest, &trial_data)?;
    println!(
        "wrote {} trials ({} subjects, {} channels x {} samples, difficulty {}) to {}",
        manifest.trials.len(),
        subjects,
        channels,
        samples,
        difficulty,
        out.display()
    );
    Ok(0)
}

fn cmd_import(src: &Path, out: &Path) -> anyhow::Result<i32> {
    let manifest = import_csv(src, out)?;
    println!(
        "imported {} trials over {} subjects into {}",
        manifest.trials.len(),
        manifest.subjects.len(),
        out.display()
    );
    Ok(0)
}
