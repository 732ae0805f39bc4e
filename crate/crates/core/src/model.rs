//! Reference architectures: a two-layer residual spiking network and its
//! conventional counterpart, built from one declarative spec.
//!
//! Both families share the skeleton: clone the input as a residual, encode
//! with a (1,5) same-padded convolution, pool, classify with a (10,10)
//! same-padded convolution, refine with attention, add the pooled residual,
//! pool again, flatten (channels-major), then two linear layers down to two
//! logits. The spiking family thresholds with closed-form LIF neurons (with a
//! per-channel membrane normalization folded in) and max pooling keeps the
//! stream binary, so the second convolution and first linear layer receive
//! {0,1} inputs and count as accumulate-only. The conventional family uses
//! batch norm + ReLU + average pooling and is multiply-accumulate throughout.

use crate::attention::{AttentionConfig, AttentionKind, AttentionLayer};
use crate::error::{Result, SnnError};
use crate::lif::{self, LeakyKernel};
use crate::tensor::{BnMode, NodeId, ParamId, ParamStore, RunningStats, Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Extent of the first linear layer's output.
pub const HIDDEN: usize = 20;
/// Number of output classes.
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkFamily {
    Snn,
    Cnn,
}

/// Declarative description of one network instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: NetworkFamily,
    /// Channel extent C.
    pub channels: usize,
    /// Timepieces S.
    pub timepieces: usize,
    /// Steps per timepiece T.
    pub steps: usize,
    pub attention: AttentionConfig,
    /// Membrane time constant of the spiking neurons.
    pub tau: f32,
    /// Firing threshold.
    pub v_th: f32,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(SnnError::Config("channel extent must be positive".into()));
        }
        if self.timepieces % 4 != 0 || self.steps % 4 != 0 || self.timepieces == 0 || self.steps == 0
        {
            return Err(SnnError::Config(format!(
                "timepieces and steps must be positive multiples of 4 (two 2x2 pools), got S={}, T={}",
                self.timepieces, self.steps
            )));
        }
        if self.attention.kind == AttentionKind::Global && self.timepieces != self.steps {
            return Err(SnnError::Config(format!(
                "global attention needs S == T, got S={}, T={}",
                self.timepieces, self.steps
            )));
        }
        if self.tau <= 0.0 || self.v_th <= 0.0 {
            return Err(SnnError::Config(format!(
                "neuron parameters must be positive, got tau={}, v_th={}",
                self.tau, self.v_th
            )));
        }
        Ok(())
    }

    /// Trial length D = S * T.
    pub fn trial_len(&self) -> usize {
        self.timepieces * self.steps
    }

    pub fn flattened(&self) -> usize {
        self.channels * (self.timepieces / 4) * (self.steps / 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// One pipeline stage. The order of the `layers` list is the execution order
/// and also drives the static cost profile.
#[derive(Debug, Clone)]
pub enum Layer {
    CloneResidual,
    Conv2d {
        name: String,
        w: ParamId,
        b: ParamId,
        kh: usize,
        kw: usize,
        /// True when this layer's input is a spike train (accumulate-only).
        ac: bool,
    },
    BatchNorm {
        name: String,
        gamma: ParamId,
        beta: ParamId,
        stats: RunningStats,
    },
    Relu,
    /// Closed-form spiking threshold with embedded membrane normalization.
    Spiking {
        name: String,
        kernel: LeakyKernel,
        bn_gamma: ParamId,
        bn_beta: ParamId,
        stats: RunningStats,
    },
    MaxPool,
    AvgPool,
    Attention(AttentionLayer),
    /// Pool the saved residual to the current shape and add it.
    AddResidual { pool: PoolKind },
    Flatten,
    Linear {
        name: String,
        w: ParamId,
        b: ParamId,
        ac: bool,
    },
}

/// An instantiated network: parameter store plus the ordered layer list.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    pub layers: Vec<Layer>,
}

/// Everything the caller may want from one forward pass.
pub struct ForwardOutput {
    pub logits: NodeId,
    /// Tape node of each parameter, indexed by `ParamId`.
    pub bound: Vec<NodeId>,
    /// Input node of each accumulate-only layer, with the layer name.
    pub ac_inputs: Vec<(String, NodeId)>,
    /// Spike output of the encoder stage (spiking family only).
    pub encoder_spikes: Option<NodeId>,
    /// Post-softmax attention scores, when an attention layer is present.
    pub attention_scores: Option<NodeId>,
}

/// Build the spiking network for `spec` with seeded initialization.
pub fn build_snn(spec: &NetworkSpec, seed: u64) -> Result<Model> {
    let mut spec = spec.clone();
    spec.family = NetworkFamily::Snn;
    build(&spec, seed)
}

/// Build the conventional counterpart for `spec`.
pub fn build_cnn(spec: &NetworkSpec, seed: u64) -> Result<Model> {
    let mut spec = spec.clone();
    spec.family = NetworkFamily::Cnn;
    build(&spec, seed)
}

fn build(spec: &NetworkSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    let c = spec.channels;
    let snn = spec.family == NetworkFamily::Snn;

    let conv = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, kh: usize, kw: usize| {
        let fan_in = c * kh * kw;
        let w = Tensor::kaiming_uniform(&[c, c, kh, kw], fan_in, rng);
        let bound = 1.0 / (fan_in as f32).sqrt();
        let b = Tensor::rand_uniform(&[c], -bound, bound, rng);
        (
            store.add(format!("{name}.weight"), w),
            store.add(format!("{name}.bias"), b),
        )
    };
    let norm = |store: &mut ParamStore, name: &str| {
        (
            store.add(format!("{name}.gamma"), Tensor::ones(&[c])),
            store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
        )
    };

    layers.push(Layer::CloneResidual);

    let (w1, b1) = conv(&mut store, &mut rng, "conv1", 1, 5);
    layers.push(Layer::Conv2d {
        name: "conv1".into(),
        w: w1,
        b: b1,
        kh: 1,
        kw: 5,
        ac: false,
    });

    if snn {
        let (g, bt) = norm(&mut store, "lif1.bn");
        layers.push(Layer::Spiking {
            name: "lif1".into(),
            kernel: LeakyKernel::new(spec.tau, 1.0, spec.v_th, spec.steps - 1)?,
            bn_gamma: g,
            bn_beta: bt,
            stats: RunningStats::new(c),
        });
        layers.push(Layer::MaxPool);
    } else {
        let (g, bt) = norm(&mut store, "bn1");
        layers.push(Layer::BatchNorm {
            name: "bn1".into(),
            gamma: g,
            beta: bt,
            stats: RunningStats::new(c),
        });
        layers.push(Layer::Relu);
        layers.push(Layer::AvgPool);
    }

    let (w2, b2) = conv(&mut store, &mut rng, "conv2", 10, 10);
    layers.push(Layer::Conv2d {
        name: "conv2".into(),
        w: w2,
        b: b2,
        kh: 10,
        kw: 10,
        ac: snn,
    });

    let attn = AttentionLayer::build(
        &mut store,
        &mut rng,
        spec.attention,
        c,
        spec.timepieces / 2,
        spec.steps / 2,
    )?;
    layers.push(Layer::Attention(attn));
    layers.push(Layer::AddResidual {
        pool: if snn { PoolKind::Max } else { PoolKind::Avg },
    });

    if snn {
        let (g, bt) = norm(&mut store, "lif2.bn");
        layers.push(Layer::Spiking {
            name: "lif2".into(),
            kernel: LeakyKernel::new(spec.tau, 1.0, spec.v_th, spec.steps / 2 - 1)?,
            bn_gamma: g,
            bn_beta: bt,
            stats: RunningStats::new(c),
        });
        layers.push(Layer::MaxPool);
    } else {
        let (g, bt) = norm(&mut store, "bn2");
        layers.push(Layer::BatchNorm {
            name: "bn2".into(),
            gamma: g,
            beta: bt,
            stats: RunningStats::new(c),
        });
        layers.push(Layer::Relu);
        layers.push(Layer::AvgPool);
    }

    layers.push(Layer::Flatten);

    let linear = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize| {
        let w = Tensor::kaiming_uniform(&[i, o], i, rng);
        let bound = 1.0 / (i as f32).sqrt();
        let b = Tensor::rand_uniform(&[o], -bound, bound, rng);
        (
            store.add(format!("{name}.weight"), w),
            store.add(format!("{name}.bias"), b),
        )
    };
    let (wf1, bf1) = linear(&mut store, &mut rng, "fc1", spec.flattened(), HIDDEN);
    layers.push(Layer::Linear {
        name: "fc1".into(),
        w: wf1,
        b: bf1,
        ac: snn,
    });
    let (wf2, bf2) = linear(&mut store, &mut rng, "fc2", HIDDEN, CLASSES);
    layers.push(Layer::Linear {
        name: "fc2".into(),
        w: wf2,
        b: bf2,
        ac: false,
    });

    Ok(Model {
        spec: spec.clone(),
        store,
        layers,
    })
}

impl Model {
    /// Run the pipeline on a (B, C, S, T) batch. Training mode folds batch
    /// statistics into the normalization layers' running state.
    pub fn forward(&mut self, tape: &mut Tape, batch: &Tensor, mode: BnMode) -> Result<ForwardOutput> {
        let want = [
            batch.shape().first().copied().unwrap_or(0),
            self.spec.channels,
            self.spec.timepieces,
            self.spec.steps,
        ];
        if batch.shape() != want {
            return Err(SnnError::Dimension(format!(
                "batch shape {:?} does not match spec {:?}",
                batch.shape(),
                want
            )));
        }
        let bound = self.store.bind(tape);
        let mut x = tape.constant(batch);
        let mut residual: Option<NodeId> = None;
        let mut ac_inputs = Vec::new();
        let mut encoder_spikes = None;
        let mut attention_scores = None;
        let mut seen_spiking = false;

        for layer in &mut self.layers {
            match layer {
                Layer::CloneResidual => residual = Some(x),
                Layer::Conv2d { name, w, b, ac, .. } => {
                    if *ac {
                        require_binary(tape, x, name)?;
                        ac_inputs.push((name.clone(), x));
                    }
                    x = tape.conv2d_same(x, bound[*w], bound[*b])?;
                }
                Layer::BatchNorm {
                    gamma, beta, stats, ..
                } => {
                    x = tape.batchnorm2d(x, bound[*gamma], bound[*beta], stats, mode)?;
                }
                Layer::Relu => x = tape.relu(x),
                Layer::Spiking {
                    kernel,
                    bn_gamma,
                    bn_beta,
                    stats,
                    ..
                } => {
                    let e_in = lif::membrane_contribution(tape, x, kernel)?;
                    let e_bn =
                        tape.batchnorm2d(e_in, bound[*bn_gamma], bound[*bn_beta], stats, mode)?;
                    let (o, _u) = lif::non_iterative_from_membrane(tape, e_bn, kernel)?;
                    x = o;
                    if !seen_spiking {
                        encoder_spikes = Some(o);
                        seen_spiking = true;
                    }
                }
                Layer::MaxPool => x = tape.max_pool2d(x)?,
                Layer::AvgPool => x = tape.avg_pool2d(x)?,
                Layer::Attention(attn) => {
                    let out = attn.forward(tape, x, &bound)?;
                    x = out.out;
                    attention_scores = out.scores;
                }
                Layer::AddResidual { pool } => {
                    let res = residual.ok_or_else(|| {
                        SnnError::Config("residual addition without a cloned residual".into())
                    })?;
                    let pooled = match pool {
                        PoolKind::Max => tape.max_pool2d(res)?,
                        PoolKind::Avg => tape.avg_pool2d(res)?,
                    };
                    x = tape.add(x, pooled)?;
                }
                Layer::Flatten => {
                    let b = tape.shape(x)[0];
                    let n: usize = tape.shape(x)[1..].iter().product();
                    x = tape.reshape(x, &[b, n])?;
                }
                Layer::Linear { name, w, b, ac } => {
                    if *ac {
                        require_binary(tape, x, name)?;
                        ac_inputs.push((name.clone(), x));
                    }
                    let prod = tape.matmul(x, bound[*w])?;
                    x = tape.add_broadcast(prod, bound[*b])?;
                }
            }
        }
        Ok(ForwardOutput {
            logits: x,
            bound,
            ac_inputs,
            encoder_spikes,
            attention_scores,
        })
    }

    /// The attention layer, when the spec carries one.
    pub fn attention(&self) -> Option<&AttentionLayer> {
        self.layers.iter().find_map(|l| match l {
            Layer::Attention(a) if a.cfg.kind != AttentionKind::None => Some(a),
            _ => None,
        })
    }
}

fn require_binary(tape: &Tape, x: NodeId, name: &str) -> Result<()> {
    if tape.data(x).iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(SnnError::Contract(format!(
            "input of accumulate-only layer {name} is not binary"
        )));
    }
    Ok(())
}

/// Copy convolution/linear/attention parameters and normalization state from
/// a trained conventional model into its spiking counterpart, positionally.
/// Neuron-specific parameters (leak matrices, threshold) are untouched.
pub fn transfer_weights_cnn_to_snn(cnn: &Model, snn: &mut Model) -> Result<()> {
    if cnn.spec.family != NetworkFamily::Cnn || snn.spec.family != NetworkFamily::Snn {
        return Err(SnnError::Transfer(
            "transfer runs from a cnn-family model to an snn-family model".into(),
        ));
    }
    if cnn.spec.attention.kind != snn.spec.attention.kind {
        return Err(SnnError::Transfer(format!(
            "attention kinds differ: {} vs {}",
            cnn.spec.attention.kind.as_str(),
            snn.spec.attention.kind.as_str()
        )));
    }
    if cnn.spec.channels != snn.spec.channels
        || cnn.spec.timepieces != snn.spec.timepieces
        || cnn.spec.steps != snn.spec.steps
    {
        return Err(SnnError::Transfer(format!(
            "network extents differ: ({}, {}, {}) vs ({}, {}, {})",
            cnn.spec.channels,
            cnn.spec.timepieces,
            cnn.spec.steps,
            snn.spec.channels,
            snn.spec.timepieces,
            snn.spec.steps
        )));
    }
    if cnn.store.len() != snn.store.len() {
        return Err(SnnError::Transfer(format!(
            "parameter counts differ: {} vs {}",
            cnn.store.len(),
            snn.store.len()
        )));
    }
    for id in 0..cnn.store.len() {
        let src = cnn.store.get(id);
        if src.value.shape() != snn.store.get(id).value.shape() {
            return Err(SnnError::Transfer(format!(
                "first mismatched layer parameter: {} ({:?} vs {:?})",
                src.name,
                src.value.shape(),
                snn.store.get(id).value.shape()
            )));
        }
        let dst = snn.store.get_mut(id);
        dst.value.data_mut().copy_from_slice(src.value.data());
    }
    // normalization running state maps onto the membrane-normalization slots
    let src_stats: Vec<&RunningStats> = cnn
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::BatchNorm { stats, .. } => Some(stats),
            _ => None,
        })
        .collect();
    let mut dst_stats: Vec<&mut RunningStats> = snn
        .layers
        .iter_mut()
        .filter_map(|l| match l {
            Layer::Spiking { stats, .. } => Some(stats),
            _ => None,
        })
        .collect();
    if src_stats.len() != dst_stats.len() {
        return Err(SnnError::Transfer(format!(
            "normalization layer counts differ: {} vs {}",
            src_stats.len(),
            dst_stats.len()
        )));
    }
    for (src, dst) in src_stats.into_iter().zip(dst_stats.iter_mut()) {
        dst.mean.copy_from_slice(&src.mean);
        dst.var.copy_from_slice(&src.var);
        dst.momentum = src.momentum;
        dst.eps = src.eps;
    }
    Ok(())
}

// ---- checkpoint container ---------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"SNNCKPT\x01";

/// One named tensor inside a checkpoint container.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Binary container: versioned magic, JSON metadata block, entry manifest
/// (name, shape, offset), raw little-endian f32 payload, trailing FNV-1a64
/// checksum of the payload.
pub fn write_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    entries: &[CheckpointEntry],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    let meta_bytes = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        let numel: usize = e.shape.iter().product();
        if numel != e.data.len() {
            return Err(SnnError::Contract(format!(
                "checkpoint entry {} shape/data mismatch",
                e.name
            )));
        }
        offset += (e.data.len() * 4) as u64;
    }
    buf.extend_from_slice(&offset.to_le_bytes());
    let payload_start = buf.len();
    for e in entries {
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&buf[payload_start..]);
    buf.extend_from_slice(&checksum.to_le_bytes());
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<CheckpointEntry>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |what: &str| SnnError::Contract(format!("malformed checkpoint: {what}"));
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(fail("truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != CKPT_MAGIC {
        return Err(fail("bad magic or version"));
    }
    let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta: serde_json::Value = serde_json::from_slice(take(&mut pos, meta_len)?)?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| fail("entry name is not utf-8"))?;
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        manifest.push((name, shape, offset));
    }
    let payload_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let payload = take(&mut pos, payload_len)?.to_vec();
    let checksum = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    if fnv1a64(&payload) != checksum {
        return Err(fail("payload checksum mismatch"));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, shape, offset) in manifest {
        let numel: usize = shape.iter().product();
        if offset + numel * 4 > payload.len() {
            return Err(fail("entry runs past payload"));
        }
        let data = payload[offset..offset + numel * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok((meta, entries))
}

impl Model {
    /// All persistent state: parameters plus normalization running stats.
    pub fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        let mut entries: Vec<CheckpointEntry> = self
            .store
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        for layer in &self.layers {
            let (name, stats) = match layer {
                Layer::BatchNorm { name, stats, .. } => (name.clone(), stats),
                Layer::Spiking { name, stats, .. } => (format!("{name}.bn"), stats),
                _ => continue,
            };
            entries.push(CheckpointEntry {
                name: format!("{name}.running_mean"),
                shape: vec![stats.mean.len()],
                data: stats.mean.clone(),
            });
            entries.push(CheckpointEntry {
                name: format!("{name}.running_var"),
                shape: vec![stats.var.len()],
                data: stats.var.clone(),
            });
        }
        entries
    }

    /// Restore state produced by [`Model::checkpoint_entries`]. Entries with
    /// unknown names are ignored so callers can stash extra state (optimizer
    /// moments) in the same container.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let by_name: std::collections::HashMap<&str, &CheckpointEntry> =
            entries.iter().map(|e| (e.name.as_str(), e)).collect();
        for id in 0..self.store.len() {
            let name = self.store.get(id).name.clone();
            let e = by_name
                .get(name.as_str())
                .ok_or_else(|| SnnError::Contract(format!("checkpoint misses parameter {name}")))?;
            if e.shape != self.store.get(id).value.shape() {
                return Err(SnnError::Contract(format!(
                    "checkpoint parameter {name} has shape {:?}, model wants {:?}",
                    e.shape,
                    self.store.get(id).value.shape()
                )));
            }
            self.store
                .get_mut(id)
                .value
                .data_mut()
                .copy_from_slice(&e.data);
        }
        for layer in &mut self.layers {
            let (name, stats) = match layer {
                Layer::BatchNorm { name, stats, .. } => (name.clone(), stats),
                Layer::Spiking { name, stats, .. } => (format!("{name}.bn"), stats),
                _ => continue,
            };
            for (suffix, slot) in [("running_mean", &mut stats.mean), ("running_var", &mut stats.var)]
            {
                let key = format!("{name}.{suffix}");
                let e = by_name
                    .get(key.as_str())
                    .ok_or_else(|| SnnError::Contract(format!("checkpoint misses {key}")))?;
                slot.copy_from_slice(&e.data);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_spec(kind: AttentionKind, family: NetworkFamily) -> NetworkSpec {
        NetworkSpec {
            family,
            channels: 3,
            timepieces: 8,
            steps: 8,
            attention: AttentionConfig {
                kind,
                d1: 2,
                d2: 3,
                d: 2,
                alpha_init: 0.0,
            },
            tau: 2.0,
            v_th: 0.5,
        }
    }

    fn batch(spec: &NetworkSpec, b: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(
            &[b, spec.channels, spec.timepieces, spec.steps],
            -1.0,
            1.0,
            &mut rng,
        )
    }

    #[test]
    fn snn_forward_produces_two_logits() {
        let spec = toy_spec(AttentionKind::Global, NetworkFamily::Snn);
        let mut model = build_snn(&spec, 0).unwrap();
        let x = batch(&spec, 4, 1);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &x, BnMode::Train).unwrap();
        assert_eq!(tape.shape(out.logits), &[4, CLASSES]);
        assert!(tape.data(out.logits).iter().all(|v| v.is_finite()));
        // both accumulate-only edges got captured and were binary
        assert_eq!(out.ac_inputs.len(), 2);
        assert_eq!(out.ac_inputs[0].0, "conv2");
        assert_eq!(out.ac_inputs[1].0, "fc1");
        assert!(out.encoder_spikes.is_some());
    }

    #[test]
    fn cnn_forward_produces_two_logits_and_trains_all_params() {
        let mut spec = toy_spec(AttentionKind::ConvChanseq, NetworkFamily::Cnn);
        // nonzero mixing so the attention projections sit on a live path
        spec.attention.alpha_init = 0.25;
        let mut model = build_cnn(&spec, 0).unwrap();
        let x = batch(&spec, 4, 2);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &x, BnMode::Train).unwrap();
        assert_eq!(tape.shape(out.logits), &[4, CLASSES]);
        let mut labels = Tensor::zeros(&[4, CLASSES]);
        for i in 0..4 {
            labels.data_mut()[i * CLASSES + i % 2] = 1.0;
        }
        let loss = tape.cross_entropy_mean(out.logits, &labels).unwrap();
        tape.backward(loss).unwrap();
        model.store.accumulate_grads(&tape, &out.bound);
        for p in model.store.iter() {
            let g = p.value.grad.as_ref().expect("grad allocated");
            assert!(
                g.iter().any(|&v| v != 0.0),
                "parameter {} received no gradient",
                p.name
            );
        }
    }

    #[test]
    fn identical_samples_give_identical_logit_rows() {
        let spec = toy_spec(AttentionKind::LinearSeq, NetworkFamily::Snn);
        let mut model = build_snn(&spec, 3).unwrap();
        let one = batch(&spec, 1, 5);
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let x = Tensor::new(
            vec![2, spec.channels, spec.timepieces, spec.steps],
            two,
        )
        .unwrap();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &x, BnMode::Infer).unwrap();
        let d = tape.data(out.logits);
        assert_eq!(&d[..CLASSES], &d[CLASSES..]);
    }

    #[test]
    fn residual_alone_survives_zeroed_classifier() {
        // zero conv weights + alpha 0: the block output before lif2 equals
        // the pooled residual plus the conv2 bias (also zeroed here)
        let spec = toy_spec(AttentionKind::Global, NetworkFamily::Cnn);
        let mut model = build_cnn(&spec, 7).unwrap();
        for p in model.store.iter_mut() {
            if p.name.starts_with("conv2") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = batch(&spec, 2, 9);
        let mut tape = Tape::new();
        // run manually up to the residual add
        let bound = model.store.bind(&mut tape);
        let mut xn = tape.constant(&x);
        let res = xn;
        let mut after_residual = None;
        for layer in &mut model.layers {
            match layer {
                Layer::CloneResidual => {}
                Layer::Conv2d { w, b, .. } => xn = tape.conv2d_same(xn, bound[*w], bound[*b]).unwrap(),
                Layer::BatchNorm { gamma, beta, stats, .. } => {
                    xn = tape
                        .batchnorm2d(xn, bound[*gamma], bound[*beta], stats, BnMode::Train)
                        .unwrap()
                }
                Layer::Relu => xn = tape.relu(xn),
                Layer::AvgPool => xn = tape.avg_pool2d(xn).unwrap(),
                Layer::Attention(a) => xn = a.forward(&mut tape, xn, &bound).unwrap().out,
                Layer::AddResidual { .. } => {
                    let pooled = tape.avg_pool2d(res).unwrap();
                    xn = tape.add(xn, pooled).unwrap();
                    after_residual = Some((xn, pooled));
                    break;
                }
                _ => unreachable!("pipeline order"),
            }
        }
        let (sum, pooled) = after_residual.unwrap();
        assert_eq!(tape.data(sum), tape.data(pooled));
    }

    #[test]
    fn parameter_count_matches_hand_sum() {
        let spec = toy_spec(AttentionKind::None, NetworkFamily::Snn);
        let model = build_snn(&spec, 0).unwrap();
        let c = spec.channels;
        let flat = spec.flattened();
        let want = (c * c * 5 + c)      // conv1 (1,5)
            + 2 * c                     // membrane norm 1
            + (c * c * 100 + c)         // conv2 (10,10)
            + 2 * c                     // membrane norm 2
            + (flat * HIDDEN + HIDDEN)  // fc1
            + (HIDDEN * CLASSES + CLASSES); // fc2
        let got: usize = model.store.iter().map(|p| p.value.numel()).sum();
        assert_eq!(got, want);
    }

    #[test]
    fn transfer_copies_weights_and_stats() {
        let spec = toy_spec(AttentionKind::Global, NetworkFamily::Cnn);
        let mut cnn = build_cnn(&spec, 11).unwrap();
        // push the cnn's stats away from init
        let x = batch(&spec, 4, 13);
        let mut tape = Tape::new();
        cnn.forward(&mut tape, &x, BnMode::Train).unwrap();
        let mut snn = build_snn(&spec, 999).unwrap();
        transfer_weights_cnn_to_snn(&cnn, &mut snn).unwrap();
        for id in 0..cnn.store.len() {
            assert_eq!(
                cnn.store.get(id).value.data(),
                snn.store.get(id).value.data(),
                "param {}",
                cnn.store.get(id).name
            );
        }
        // snn forward runs after transfer
        let mut tape = Tape::new();
        let out = snn.forward(&mut tape, &x, BnMode::Infer).unwrap();
        assert_eq!(tape.shape(out.logits), &[4, CLASSES]);
    }

    #[test]
    fn transfer_rejects_attention_mismatch() {
        let cnn = build_cnn(&toy_spec(AttentionKind::Global, NetworkFamily::Cnn), 0).unwrap();
        let mut snn = build_snn(&toy_spec(AttentionKind::ConvSeq, NetworkFamily::Snn), 0).unwrap();
        let err = transfer_weights_cnn_to_snn(&cnn, &mut snn).unwrap_err();
        assert!(matches!(err, SnnError::Transfer(_)), "{err}");
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let spec = toy_spec(AttentionKind::LinearChanseq, NetworkFamily::Snn);
        let mut model = build_snn(&spec, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = serde_json::json!({"phase": "test", "epoch": 3});
        write_checkpoint(&path, &meta, &model.checkpoint_entries()).unwrap();
        let (meta2, entries) = read_checkpoint(&path).unwrap();
        assert_eq!(meta2["epoch"], 3);
        let before = model.checkpoint_entries();
        // scramble, restore, compare
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in model.store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen());
        }
        model.load_entries(&entries).unwrap();
        assert_eq!(model.checkpoint_entries(), before);
        // rewriting produces identical bytes
        let bytes1 = std::fs::read(&path).unwrap();
        write_checkpoint(&path, &meta, &model.checkpoint_entries()).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let spec = toy_spec(AttentionKind::None, NetworkFamily::Cnn);
        let model = build_cnn(&spec, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &serde_json::json!({}), &model.checkpoint_entries()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0xff; // flip a payload byte
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn bad_batch_shape_is_rejected() {
        let spec = toy_spec(AttentionKind::None, NetworkFamily::Snn);
        let mut model = build_snn(&spec, 0).unwrap();
        let x = Tensor::zeros(&[2, spec.channels, spec.timepieces, spec.steps + 4]);
        let mut tape = Tape::new();
        assert!(matches!(
            model.forward(&mut tape, &x, BnMode::Infer),
            Err(SnnError::Dimension(_))
        ));
    }
}
