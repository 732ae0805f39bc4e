//! Single-shot attention mechanisms over (B, C, S, T) feature maps, where S
//! indexes timepieces and T the steps inside each piece.
//!
//! Two families: linear mechanisms project with fully connected layers and
//! add a fixed sinusoidal position embedding; convolutional mechanisms
//! project with 1x1 channel-expansion convolutions and mix the refined map
//! back through a trainable scalar residual (`alpha * refined + x`), so they
//! start as exact identities with `alpha = 0`.
//!
//! The global mechanism scores every (channel, timepiece, step) cell. Its
//! softmax normalizes across the timepiece axis, so for each step column the
//! scores say which timepieces matter; the refined map is an elementwise
//! product. The other four normalize over their last (timepiece) axis.

use crate::error::{Result, SnnError};
use crate::tensor::{NodeId, ParamId, ParamStore, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which attention mechanism to insert, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    None,
    LinearSeq,
    ConvSeq,
    LinearChanseq,
    ConvChanseq,
    Global,
}

impl AttentionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::LinearSeq => "linear-seq",
            AttentionKind::ConvSeq => "conv-seq",
            AttentionKind::LinearChanseq => "linear-chanseq",
            AttentionKind::ConvChanseq => "conv-chanseq",
            AttentionKind::Global => "global",
        }
    }
}

/// Hyperparameters of the attention mechanisms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    /// Heads-like extent of the linear mechanisms.
    pub d1: usize,
    /// Projected key/value extent of the linear mechanisms.
    pub d2: usize,
    /// Channel expansion factor of the convolutional mechanisms.
    pub d: usize,
    /// Initial value of the residual mixing scalar.
    pub alpha_init: f32,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            kind: AttentionKind::None,
            d1: 6,
            d2: 20,
            d: 8,
            alpha_init: 0.0,
        }
    }
}

/// Fixed (non-trainable) sine/cosine table over positions and features.
pub fn sinusoidal_position_embedding(positions: usize, features: usize) -> Tensor {
    let mut data = vec![0.0f32; positions * features];
    for p in 0..positions {
        for f in 0..features {
            let pair = (f / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / features as f64);
            data[p * features + f] = if f % 2 == 0 {
                angle.sin() as f32
            } else {
                angle.cos() as f32
            };
        }
    }
    Tensor::new(vec![positions, features], data).unwrap()
}

#[derive(Debug, Clone)]
enum Params {
    None,
    LinearSeq {
        wq: ParamId,
        bq: ParamId,
        wk: ParamId,
        bk: ParamId,
        wv: ParamId,
        bv: ParamId,
        wo: ParamId,
        bo: ParamId,
    },
    Conv {
        wq: ParamId,
        bq: ParamId,
        wk: ParamId,
        bk: ParamId,
        alpha: ParamId,
    },
    LinearChanseq {
        wq: ParamId,
        bq: ParamId,
        wk: ParamId,
        bk: ParamId,
        wv: ParamId,
        bv: ParamId,
        wo: ParamId,
        bo: ParamId,
    },
}

/// An attention mechanism instantiated for a fixed (C, S, T) insertion shape.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub cfg: AttentionConfig,
    pub c: usize,
    pub s: usize,
    pub t: usize,
    params: Params,
    position: Option<Tensor>,
}

/// Forward result: the refined feature map and, for score-bearing kinds,
/// the post-softmax attention scores in their native shape.
pub struct AttentionOut {
    pub out: NodeId,
    pub scores: Option<NodeId>,
}

fn linear_pair<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    let w = Tensor::kaiming_uniform(&[fan_in, fan_out], fan_in, rng);
    let bound = 1.0 / (fan_in as f32).sqrt();
    let b = Tensor::rand_uniform(&[fan_out], -bound, bound, rng);
    (
        store.add(format!("{name}.weight"), w),
        store.add(format!("{name}.bias"), b),
    )
}

fn conv1x1_pair<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    c_in: usize,
    c_out: usize,
) -> (ParamId, ParamId) {
    let w = Tensor::kaiming_uniform(&[c_out, c_in, 1, 1], c_in, rng);
    let bound = 1.0 / (c_in as f32).sqrt();
    let b = Tensor::rand_uniform(&[c_out], -bound, bound, rng);
    (
        store.add(format!("{name}.weight"), w),
        store.add(format!("{name}.bias"), b),
    )
}

impl AttentionLayer {
    /// Register parameters for a mechanism operating on (C, S, T) maps.
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: AttentionConfig,
        c: usize,
        s: usize,
        t: usize,
    ) -> Result<Self> {
        if cfg.d1 == 0 || cfg.d2 == 0 || cfg.d == 0 {
            return Err(SnnError::Config(
                "attention extents d1, d2, d must be positive".into(),
            ));
        }
        let (params, position) = match cfg.kind {
            AttentionKind::None => (Params::None, None),
            AttentionKind::LinearSeq => {
                let features = c * t;
                let proj = cfg.d1 * cfg.d2;
                let (wq, bq) = linear_pair(store, rng, "attn.seq.q", features, proj);
                let (wk, bk) = linear_pair(store, rng, "attn.seq.k", features, proj);
                let (wv, bv) = linear_pair(store, rng, "attn.seq.v", features, proj);
                let (wo, bo) = linear_pair(store, rng, "attn.seq.out", proj, features);
                (
                    Params::LinearSeq {
                        wq,
                        bq,
                        wk,
                        bk,
                        wv,
                        bv,
                        wo,
                        bo,
                    },
                    Some(sinusoidal_position_embedding(s, features)),
                )
            }
            AttentionKind::LinearChanseq => {
                let proj = cfg.d1 * cfg.d2;
                let (wq, bq) = linear_pair(store, rng, "attn.chanseq.q", t, proj);
                let (wk, bk) = linear_pair(store, rng, "attn.chanseq.k", t, proj);
                let (wv, bv) = linear_pair(store, rng, "attn.chanseq.v", t, proj);
                let (wo, bo) = linear_pair(store, rng, "attn.chanseq.out", proj, t);
                (
                    Params::LinearChanseq {
                        wq,
                        bq,
                        wk,
                        bk,
                        wv,
                        bv,
                        wo,
                        bo,
                    },
                    Some(sinusoidal_position_embedding(s, t)),
                )
            }
            AttentionKind::ConvSeq | AttentionKind::ConvChanseq | AttentionKind::Global => {
                if cfg.kind == AttentionKind::Global && s != t {
                    return Err(SnnError::Config(format!(
                        "global attention needs equal timepiece and step extents, got S={s}, T={t}"
                    )));
                }
                let name = cfg.kind.as_str();
                let (wq, bq) = conv1x1_pair(store, rng, &format!("attn.{name}.q"), c, cfg.d * c);
                let (wk, bk) = conv1x1_pair(store, rng, &format!("attn.{name}.k"), c, cfg.d * c);
                let alpha = store.add(
                    format!("attn.{name}.alpha"),
                    Tensor::scalar(cfg.alpha_init),
                );
                (
                    Params::Conv {
                        wq,
                        bq,
                        wk,
                        bk,
                        alpha,
                    },
                    None,
                )
            }
        };
        Ok(AttentionLayer {
            cfg,
            c,
            s,
            t,
            params,
            position,
        })
    }

    /// Apply the mechanism to `x` of shape (B, C, S, T).
    pub fn forward(&self, tape: &mut Tape, x: NodeId, bound: &[NodeId]) -> Result<AttentionOut> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.c || shape[2] != self.s || shape[3] != self.t {
            return Err(SnnError::Dimension(format!(
                "attention built for (C,S,T)=({},{},{}) got input {shape:?}",
                self.c, self.s, self.t
            )));
        }
        match &self.params {
            Params::None => Ok(AttentionOut {
                out: x,
                scores: None,
            }),
            Params::LinearSeq {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
            } => self.linear_seq(tape, x, bound, [*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo]),
            Params::LinearChanseq {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
            } => self.linear_chanseq(tape, x, bound, [*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo]),
            Params::Conv {
                wq,
                bq,
                wk,
                bk,
                alpha,
            } => match self.cfg.kind {
                AttentionKind::ConvSeq => {
                    self.conv_seq(tape, x, bound, [*wq, *bq, *wk, *bk, *alpha])
                }
                AttentionKind::ConvChanseq => {
                    self.conv_chanseq(tape, x, bound, [*wq, *bq, *wk, *bk, *alpha])
                }
                AttentionKind::Global => {
                    self.global(tape, x, bound, [*wq, *bq, *wk, *bk, *alpha])
                }
                _ => unreachable!(),
            },
        }
    }

    /// (B,C,S,T) -> (B,S,C*T)
    fn to_seq(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let b = tape.shape(x)[0];
        let (c, t) = (tape.shape(x)[1], tape.shape(x)[3]);
        let p = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(p, &[b, self.s, c * t])
    }

    /// (B,S,C*T) -> (B,C,S,T)
    fn from_seq(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let b = tape.shape(x)[0];
        let r = tape.reshape(x, &[b, self.s, self.c, self.t])?;
        tape.permute(r, &[0, 2, 1, 3])
    }

    fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let prod = tape.matmul(x, w)?;
        tape.add_broadcast(prod, b)
    }

    fn linear_seq(
        &self,
        tape: &mut Tape,
        x: NodeId,
        bound: &[NodeId],
        [wq, bq, wk, bk, wv, bv, wo, bo]: [ParamId; 8],
    ) -> Result<AttentionOut> {
        let b = tape.shape(x)[0];
        let (d1, d2) = (self.cfg.d1, self.cfg.d2);
        let xs = self.to_seq(tape, x)?;
        let pos = tape.constant(self.position.as_ref().unwrap());
        let xp = tape.add_broadcast(xs, pos)?;
        let heads = |w: ParamId, bias: ParamId, tape: &mut Tape| -> Result<NodeId> {
            let h = Self::linear(tape, xp, bound[w], bound[bias])?;
            let h = tape.reshape(h, &[b, self.s, d1, d2])?;
            tape.permute(h, &[0, 2, 1, 3])
        };
        let q = heads(wq, bq, tape)?;
        let k = heads(wk, bk, tape)?;
        let v = heads(wv, bv, tape)?;
        let kt = tape.permute(k, &[0, 1, 3, 2])?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (d2 as f32).sqrt());
        let a = tape.softmax_lastdim(logits)?;
        let mixed = tape.matmul(a, v)?;
        let mixed = tape.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = tape.reshape(mixed, &[b, self.s, d1 * d2])?;
        let out = Self::linear(tape, mixed, bound[wo], bound[bo])?;
        let out = self.from_seq(tape, out)?;
        Ok(AttentionOut {
            out,
            scores: Some(a),
        })
    }

    fn linear_chanseq(
        &self,
        tape: &mut Tape,
        x: NodeId,
        bound: &[NodeId],
        [wq, bq, wk, bk, wv, bv, wo, bo]: [ParamId; 8],
    ) -> Result<AttentionOut> {
        let b = tape.shape(x)[0];
        let (d1, d2) = (self.cfg.d1, self.cfg.d2);
        let pos = tape.constant(self.position.as_ref().unwrap());
        let xp = tape.add_broadcast(x, pos)?;
        let heads = |w: ParamId, bias: ParamId, tape: &mut Tape| -> Result<NodeId> {
            let h = Self::linear(tape, xp, bound[w], bound[bias])?;
            let h = tape.reshape(h, &[b, self.c, self.s, d1, d2])?;
            tape.permute(h, &[0, 1, 3, 2, 4])
        };
        let q = heads(wq, bq, tape)?;
        let k = heads(wk, bk, tape)?;
        let v = heads(wv, bv, tape)?;
        let kt = tape.permute(k, &[0, 1, 2, 4, 3])?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (d2 as f32).sqrt());
        let a = tape.softmax_lastdim(logits)?;
        let mixed = tape.matmul(a, v)?;
        let mixed = tape.permute(mixed, &[0, 1, 3, 2, 4])?;
        let mixed = tape.reshape(mixed, &[b, self.c, self.s, d1 * d2])?;
        let out = Self::linear(tape, mixed, bound[wo], bound[bo])?;
        Ok(AttentionOut {
            out,
            scores: Some(a),
        })
    }

    /// 1x1 expansion conv then regroup: (B,C,S,T) -> (B,S,(d*C*T)).
    fn conv_seq_proj(
        &self,
        tape: &mut Tape,
        x: NodeId,
        w: NodeId,
        b_node: NodeId,
    ) -> Result<NodeId> {
        let b = tape.shape(x)[0];
        let q4 = tape.conv2d_same(x, w, b_node)?;
        let p = tape.permute(q4, &[0, 2, 1, 3])?;
        tape.reshape(p, &[b, self.s, self.cfg.d * self.c * self.t])
    }

    fn conv_seq(
        &self,
        tape: &mut Tape,
        x: NodeId,
        bound: &[NodeId],
        [wq, bq, wk, bk, alpha]: [ParamId; 5],
    ) -> Result<AttentionOut> {
        let q = self.conv_seq_proj(tape, x, bound[wq], bound[bq])?;
        let k = self.conv_seq_proj(tape, x, bound[wk], bound[bk])?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let logits = tape.matmul(q, kt)?;
        let a = tape.softmax_lastdim(logits)?;
        let xs = self.to_seq(tape, x)?;
        let mixed = tape.matmul(a, xs)?;
        let refined = self.from_seq(tape, mixed)?;
        let scaled = tape.mul_scalar(refined, bound[alpha])?;
        let out = tape.add(scaled, x)?;
        Ok(AttentionOut {
            out,
            scores: Some(a),
        })
    }

    /// 1x1 expansion conv then regroup per channel: (B,C,S,T) -> (B,C,S,d*T).
    fn chan_proj(&self, tape: &mut Tape, x: NodeId, w: NodeId, b_node: NodeId) -> Result<NodeId> {
        let b = tape.shape(x)[0];
        let q4 = tape.conv2d_same(x, w, b_node)?;
        // expansion factor grouped per source channel, c-major
        let g = tape.reshape(q4, &[b, self.c, self.cfg.d, self.s, self.t])?;
        let p = tape.permute(g, &[0, 1, 3, 2, 4])?;
        tape.reshape(p, &[b, self.c, self.s, self.cfg.d * self.t])
    }

    fn conv_chanseq(
        &self,
        tape: &mut Tape,
        x: NodeId,
        bound: &[NodeId],
        [wq, bq, wk, bk, alpha]: [ParamId; 5],
    ) -> Result<AttentionOut> {
        let q = self.chan_proj(tape, x, bound[wq], bound[bq])?;
        let k = self.chan_proj(tape, x, bound[wk], bound[bk])?;
        let kt = tape.permute(k, &[0, 1, 3, 2])?;
        let logits = tape.matmul(q, kt)?;
        let a = tape.softmax_lastdim(logits)?;
        let mixed = tape.matmul(a, x)?;
        let scaled = tape.mul_scalar(mixed, bound[alpha])?;
        let out = tape.add(scaled, x)?;
        Ok(AttentionOut {
            out,
            scores: Some(a),
        })
    }

    fn global(
        &self,
        tape: &mut Tape,
        x: NodeId,
        bound: &[NodeId],
        [wq, bq, wk, bk, alpha]: [ParamId; 5],
    ) -> Result<AttentionOut> {
        let b = tape.shape(x)[0];
        let q = self.chan_proj(tape, x, bound[wq], bound[bq])?;
        // key side swaps the roles of timepieces and steps
        let k4 = tape.conv2d_same(x, bound[wk], bound[bk])?;
        let kg = tape.reshape(k4, &[b, self.c, self.cfg.d, self.s, self.t])?;
        let kp = tape.permute(kg, &[0, 1, 4, 2, 3])?;
        let k = tape.reshape(kp, &[b, self.c, self.t, self.cfg.d * self.s])?;
        let kt = tape.permute(k, &[0, 1, 3, 2])?;
        let logits = tape.matmul(q, kt)?;
        // normalize across timepieces: each step column sums to one
        let lt = tape.permute(logits, &[0, 1, 3, 2])?;
        let at = tape.softmax_lastdim(lt)?;
        let a = tape.permute(at, &[0, 1, 3, 2])?;
        let mixed = tape.mul(a, x)?;
        let scaled = tape.mul_scalar(mixed, bound[alpha])?;
        let out = tape.add(scaled, x)?;
        Ok(AttentionOut {
            out,
            scores: Some(a),
        })
    }

    /// Axis of the score tensor normalized by the softmax.
    pub fn softmax_axis(&self) -> Option<usize> {
        match self.cfg.kind {
            AttentionKind::None => None,
            AttentionKind::LinearSeq => Some(3),
            AttentionKind::LinearChanseq => Some(4),
            AttentionKind::ConvSeq => Some(2),
            AttentionKind::ConvChanseq => Some(3),
            AttentionKind::Global => Some(2),
        }
    }
}

/// Sum the score tensor along the normalized axis; every sum should be 1.
pub fn score_axis_sums(scores: &Tensor, axis: usize) -> Vec<f32> {
    let shape = scores.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut sums = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for a in 0..axis_len {
            for i in 0..inner {
                sums[o * inner + i] += scores.data()[(o * axis_len + a) * inner + i];
            }
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const KINDS: [AttentionKind; 5] = [
        AttentionKind::LinearSeq,
        AttentionKind::ConvSeq,
        AttentionKind::LinearChanseq,
        AttentionKind::ConvChanseq,
        AttentionKind::Global,
    ];

    fn small_cfg(kind: AttentionKind) -> AttentionConfig {
        AttentionConfig {
            kind,
            d1: 2,
            d2: 3,
            d: 2,
            alpha_init: 0.0,
        }
    }

    fn run(kind: AttentionKind, alpha: f32, x: &Tensor) -> (Tensor, Option<Tensor>, usize) {
        let mut cfg = small_cfg(kind);
        cfg.alpha_init = alpha;
        let (_, c, s, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let layer = AttentionLayer::build(&mut store, &mut rng, cfg, c, s, t).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xn = tape.constant(x);
        let out = layer.forward(&mut tape, xn, &bound).unwrap();
        (
            tape.tensor(out.out),
            out.scores.map(|s| tape.tensor(s)),
            layer.softmax_axis().unwrap(),
        )
    }

    #[test]
    fn all_kinds_preserve_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::rand_uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        for kind in KINDS {
            let (out, _, _) = run(kind, 0.3, &x);
            assert_eq!(out.shape(), x.shape(), "{kind:?}");
        }
    }

    #[test]
    fn softmax_axis_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::rand_uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        for kind in KINDS {
            let (_, scores, axis) = run(kind, 0.5, &x);
            let scores = scores.unwrap();
            for v in scores.data() {
                assert!(*v > 0.0 && *v < 1.0, "{kind:?} score {v} outside (0,1)");
            }
            for s in score_axis_sums(&scores, axis) {
                assert!((s - 1.0).abs() < 1e-6, "{kind:?} sum {s}");
            }
        }
    }

    #[test]
    fn residual_kinds_are_identity_at_alpha_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::rand_uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        for kind in [
            AttentionKind::ConvSeq,
            AttentionKind::ConvChanseq,
            AttentionKind::Global,
        ] {
            let (out, _, _) = run(kind, 0.0, &x);
            assert_eq!(out.data(), x.data(), "{kind:?}");
        }
    }

    #[test]
    fn zero_output_projection_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::rand_uniform(&[1, 2, 3, 4], -1.0, 1.0, &mut rng);
        let mut store = ParamStore::new();
        let layer = AttentionLayer::build(
            &mut store,
            &mut rng,
            small_cfg(AttentionKind::LinearSeq),
            2,
            3,
            4,
        )
        .unwrap();
        // zero the final projection
        for p in store.iter_mut() {
            if p.name.starts_with("attn.seq.out") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xn = tape.constant(&x);
        let out = layer.forward(&mut tape, xn, &bound).unwrap();
        assert!(tape.data(out.out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_channels_get_identical_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let one = Tensor::rand_uniform(&[1, 1, 3, 4], -1.0, 1.0, &mut rng);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let x = Tensor::new(vec![1, 2, 3, 4], data).unwrap();
        let (_, scores, _) = run(AttentionKind::LinearChanseq, 0.0, &x);
        let scores = scores.unwrap(); // (B,C,d1,S,S)
        let per_chan = scores.numel() / 2;
        assert_eq!(
            &scores.data()[..per_chan],
            &scores.data()[per_chan..],
            "shared projections must score identical channels identically"
        );
    }

    #[test]
    fn conv_seq_is_equivariant_under_timepiece_permutation() {
        // 1x1 projections do no cross-timepiece mixing, so permuting the S
        // axis and inverse-permuting the output is a no-op.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (c, s, t) = (2usize, 4usize, 3usize);
        let x = Tensor::rand_uniform(&[1, c, s, t], -1.0, 1.0, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Tensor::zeros(&[1, c, s, t]);
        for ci in 0..c {
            for si in 0..s {
                for ti in 0..t {
                    let src = (ci * s + perm[si]) * t + ti;
                    xp.data_mut()[(ci * s + si) * t + ti] = x.data()[src];
                }
            }
        }
        let (base, _, _) = run(AttentionKind::ConvSeq, 0.7, &x);
        let (permuted, _, _) = run(AttentionKind::ConvSeq, 0.7, &xp);
        for ci in 0..c {
            for si in 0..s {
                for ti in 0..t {
                    let a = base.data()[(ci * s + perm[si]) * t + ti];
                    let b = permuted.data()[(ci * s + si) * t + ti];
                    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn batch_samples_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::rand_uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let mut x2 = x.clone();
        // perturb sample 1 only
        let half = x.numel() / 2;
        for v in &mut x2.data_mut()[half..] {
            *v += 0.25;
        }
        for kind in KINDS {
            let (a, _, _) = run(kind, 0.4, &x);
            let (b, _, _) = run(kind, 0.4, &x2);
            assert_eq!(&a.data()[..half], &b.data()[..half], "{kind:?}");
        }
    }

    #[test]
    fn global_requires_square_maps() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let err = AttentionLayer::build(
            &mut store,
            &mut rng,
            small_cfg(AttentionKind::Global),
            2,
            3,
            4,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("S=3") && msg.contains("T=4"), "{msg}");
    }

    #[test]
    fn position_embedding_is_deterministic_and_bounded() {
        let a = sinusoidal_position_embedding(6, 10);
        let b = sinusoidal_position_embedding(6, 10);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        // position 0: sines are exactly zero on even feature indices
        for f in (0..10).step_by(2) {
            assert_eq!(a.data()[f], 0.0);
        }
    }
}
