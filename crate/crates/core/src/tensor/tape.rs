//! Wengert-style tape: every differentiable operation appends a node holding
//! its output value, the parent ids, and whatever the backward rule needs.
//! Creation order is topological order, so backward is a single reverse scan.

use super::ops::{self, ConvDims};
use super::Tensor;
use crate::error::{Result, SnnError};

pub type NodeId = usize;

/// Surrogate derivative used by a spike threshold in the backward pass.
/// The forward pass is always the strict Heaviside `u > theta`.
#[derive(Debug, Clone, Copy)]
pub enum Surrogate {
    /// 1 inside the open interval (lo, hi) on the membrane value, 0 outside.
    Rect { lo: f32, hi: f32 },
    /// alpha * sigmoid(alpha*u) * (1 - sigmoid(alpha*u)), evaluated at u.
    Sigmoid { alpha: f32 },
    /// Sigmoid surrogate gated by the spike itself: silent steps pass no
    /// gradient. Used on reset paths, where an inactive reset must not leak
    /// gradient into the membrane chain.
    SigmoidGated { alpha: f32 },
}

/// Per-channel running statistics for batch normalization. The tensor op
/// updates these eagerly when recording a training-mode node.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Batch-norm execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// rhs shape is an exact suffix of lhs shape; rhs tiles over the lead.
    AddBroadcast(NodeId, NodeId),
    /// rhs has a single element.
    MulScalar(NodeId, NodeId),
    Scale(NodeId, f32),
    Relu(NodeId),
    /// Strict threshold with no gradient.
    Heaviside { input: NodeId, theta: f32 },
    /// Strict threshold with a surrogate gradient.
    Spike {
        input: NodeId,
        theta: f32,
        surrogate: Surrogate,
    },
    Matmul { lhs: NodeId, rhs: NodeId },
    Conv2dSame {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
    },
    MaxPool2d { x: NodeId, argmax: Vec<u32> },
    AvgPool2d { x: NodeId },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    SoftmaxLast { x: NodeId },
    Reshape { x: NodeId },
    Permute { x: NodeId, perm: Vec<usize> },
    IndexLast { x: NodeId, idx: usize },
    ConcatLast { parts: Vec<NodeId> },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    /// Softmax + NLL fused, mean over the batch; `targets` is one-hot.
    CrossEntropyMean {
        logits: NodeId,
        targets: Vec<f32>,
        probs: Vec<f32>,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode autodiff tape. Confined to one logical execution thread;
/// run independent batches on independent tapes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded nodes whose op satisfies `pred`; the operation
    /// counter used to check that closed-form neuron layers stay loop-free.
    pub fn count_ops(&self, pred: impl Fn(&Op) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.op)).count()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    /// Register a tensor as a leaf. Gradient tracking follows the tensor's
    /// own `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let rg = t.requires_grad;
        self.push(t.shape().to_vec(), t.into_data(), rg, Op::Leaf)
    }

    /// Register a non-trainable constant.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn data(&self, id: NodeId) -> &[f32] {
        &self.nodes[id].data
    }

    pub fn numel(&self, id: NodeId) -> usize {
        self.nodes[id].data.len()
    }

    /// Copy a node's value out as a tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id].shape.clone(), self.nodes[id].data.clone()).unwrap()
    }

    /// Gradient computed by the last `backward` call, if the node got one.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads[id].as_deref()
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(SnnError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        Ok(())
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a].shape.clone(), data, self.rg(&[a, b]), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(self.nodes[a].shape.clone(), data, self.rg(&[a, b]), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a].shape.clone(), data, self.rg(&[a, b]), Op::Mul(a, b)))
    }

    /// `a + b` where b's shape is an exact suffix of a's shape.
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        if sb.len() > sa.len() || &sa[sa.len() - sb.len()..] != sb.as_slice() {
            return Err(SnnError::Dimension(format!(
                "broadcast add: {sb:?} is not a suffix of {sa:?}"
            )));
        }
        let bn = self.nodes[b].data.len();
        let data = self.nodes[a]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + self.nodes[b].data[i % bn])
            .collect();
        Ok(self.push(
            self.nodes[a].shape.clone(),
            data,
            self.rg(&[a, b]),
            Op::AddBroadcast(a, b),
        ))
    }

    /// `a * s` with a single-element node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.nodes[s].data.len() != 1 {
            return Err(SnnError::Dimension(format!(
                "mul_scalar: rhs shape {:?} is not a scalar",
                self.nodes[s].shape
            )));
        }
        let sv = self.nodes[s].data[0];
        let data = self.nodes[a].data.iter().map(|x| x * sv).collect();
        Ok(self.push(
            self.nodes[a].shape.clone(),
            data,
            self.rg(&[a, s]),
            Op::MulScalar(a, s),
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f32) -> NodeId {
        let data = self.nodes[a].data.iter().map(|x| x * c).collect();
        self.push(
            self.nodes[a].shape.clone(),
            data,
            self.nodes[a].requires_grad,
            Op::Scale(a, c),
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a].data.iter().map(|x| x.max(0.0)).collect();
        self.push(
            self.nodes[a].shape.clone(),
            data,
            self.nodes[a].requires_grad,
            Op::Relu(a),
        )
    }

    /// Strict threshold: 1 where value > theta, else 0. No gradient; spiking
    /// layers use [`Tape::spike`] to attach their surrogate rule.
    pub fn heaviside(&mut self, a: NodeId, theta: f32) -> NodeId {
        let data = self.nodes[a]
            .data
            .iter()
            .map(|&x| if x > theta { 1.0 } else { 0.0 })
            .collect();
        self.push(
            self.nodes[a].shape.clone(),
            data,
            false,
            Op::Heaviside { input: a, theta },
        )
    }

    /// Strict threshold with a surrogate derivative for backward.
    pub fn spike(&mut self, a: NodeId, theta: f32, surrogate: Surrogate) -> NodeId {
        let data = self.nodes[a]
            .data
            .iter()
            .map(|&x| if x > theta { 1.0 } else { 0.0 })
            .collect();
        self.push(
            self.nodes[a].shape.clone(),
            data,
            self.nodes[a].requires_grad,
            Op::Spike {
                input: a,
                theta,
                surrogate,
            },
        )
    }

    // ---- linear algebra --------------------------------------------------

    /// Batched matrix product `[..,m,k] x [..,k,n] -> [..,m,n]` with
    /// right-aligned broadcasting of the leading extents.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let dims = ops::batched_dims(&self.nodes[a].shape, &self.nodes[b].shape)?;
        let out_shape = ops::matmul_shapes(&self.nodes[a].shape, &self.nodes[b].shape)?;
        let data = ops::matmul_forward(&self.nodes[a].data, &self.nodes[b].data, &dims);
        Ok(self.push(out_shape, data, self.rg(&[a, b]), Op::Matmul { lhs: a, rhs: b }))
    }

    /// Zero-padded same-size cross-correlation with bias.
    pub fn conv2d_same(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        let d = ConvDims::same(&self.nodes[x].shape, &self.nodes[w].shape)?;
        if self.nodes[bias].shape != vec![d.c_out] {
            return Err(SnnError::Dimension(format!(
                "conv2d bias shape {:?} != [{}]",
                self.nodes[bias].shape, d.c_out
            )));
        }
        let data =
            ops::conv2d_same_forward(&self.nodes[x].data, &self.nodes[w].data, &self.nodes[bias].data, &d);
        let shape = vec![d.batch, d.c_out, d.h, d.w];
        Ok(self.push(shape, data, self.rg(&[x, w, bias]), Op::Conv2dSame { x, w, bias }))
    }

    /// 2x2/stride-2 max pooling. Gradient routes to the argmax element,
    /// first occurrence in row-major window order on ties.
    pub fn max_pool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.nodes[x].shape.clone();
        let (b, c, h, w) = pool_dims(&s)?;
        let (oh, ow) = (h / 2, w / 2);
        let mut data = vec![0.0; b * c * oh * ow];
        let mut argmax = vec![0u32; data.len()];
        for bc in 0..b * c {
            let plane = &self.nodes[x].data[bc * h * w..(bc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = bc * oh * ow + oy * ow + ox;
                    data[o] = best;
                    argmax[o] = (bc * h * w + best_idx) as u32;
                }
            }
        }
        Ok(self.push(
            vec![b, c, oh, ow],
            data,
            self.nodes[x].requires_grad,
            Op::MaxPool2d { x, argmax },
        ))
    }

    /// 2x2/stride-2 average pooling; gradient distributes uniformly.
    pub fn avg_pool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.nodes[x].shape.clone();
        let (b, c, h, w) = pool_dims(&s)?;
        let (oh, ow) = (h / 2, w / 2);
        let mut data = vec![0.0; b * c * oh * ow];
        for bc in 0..b * c {
            let plane = &self.nodes[x].data[bc * h * w..(bc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s4 = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s4 += plane[(oy * 2 + dy) * w + ox * 2 + dx];
                        }
                    }
                    data[bc * oh * ow + oy * ow + ox] = s4 * 0.25;
                }
            }
        }
        Ok(self.push(
            vec![b, c, oh, ow],
            data,
            self.nodes[x].requires_grad,
            Op::AvgPool2d { x },
        ))
    }

    /// Per-channel batch normalization over (B, H, W) of a [B,C,H,W] input.
    /// Training mode normalizes with batch statistics and folds them into
    /// `state`; inference mode normalizes with `state`.
    pub fn batchnorm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut RunningStats,
        mode: BnMode,
    ) -> Result<NodeId> {
        let s = self.nodes[x].shape.clone();
        if s.len() != 4 {
            return Err(SnnError::Dimension(format!(
                "batchnorm2d expects [B,C,H,W], got {s:?}"
            )));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if self.nodes[gamma].shape != vec![c] || self.nodes[beta].shape != vec![c] {
            return Err(SnnError::Dimension(format!(
                "batchnorm2d parameter extent != channel count {c}"
            )));
        }
        let n = b * h * w;
        let (mean, var) = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(SnnError::Contract(format!(
                        "batchnorm2d degenerate batch: B*H*W = {n} < 2"
                    )));
                }
                let mut mean = vec![0.0f32; c];
                let mut var = vec![0.0f32; c];
                for ci in 0..c {
                    let mut sum = 0.0f64;
                    for bi in 0..b {
                        let base = (bi * c + ci) * h * w;
                        for v in &self.nodes[x].data[base..base + h * w] {
                            sum += *v as f64;
                        }
                    }
                    let m = (sum / n as f64) as f32;
                    let mut sq = 0.0f64;
                    for bi in 0..b {
                        let base = (bi * c + ci) * h * w;
                        for v in &self.nodes[x].data[base..base + h * w] {
                            let d = *v - m;
                            sq += (d * d) as f64;
                        }
                    }
                    mean[ci] = m;
                    var[ci] = (sq / n as f64) as f32;
                }
                // running mean uses the biased batch variance rescaled to the
                // unbiased estimate, matching common framework semantics
                let mom = state.momentum;
                let unbias = n as f32 / (n as f32 - 1.0);
                for ci in 0..c {
                    state.mean[ci] = (1.0 - mom) * state.mean[ci] + mom * mean[ci];
                    state.var[ci] = (1.0 - mom) * state.var[ci] + mom * var[ci] * unbias;
                }
                (mean, var)
            }
            BnMode::Infer => (state.mean.clone(), state.var.clone()),
        };
        let eps = state.eps;
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut data = vec![0.0; self.nodes[x].data.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let g = self.nodes[gamma].data[ci];
                let bt = self.nodes[beta].data[ci];
                for i in base..base + h * w {
                    data[i] = (self.nodes[x].data[i] - mean[ci]) * inv_std[ci] * g + bt;
                }
            }
        }
        Ok(self.push(
            s,
            data,
            self.rg(&[x, gamma, beta]),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train: mode == BnMode::Train,
            },
        ))
    }

    /// Softmax over the last axis, stabilized by row-max subtraction.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId> {
        for &v in &self.nodes[x].data {
            if !v.is_finite() {
                return Err(SnnError::Numeric("softmax input is not finite".into()));
            }
        }
        let row = *self.nodes[x].shape.last().unwrap();
        let mut data = vec![0.0; self.nodes[x].data.len()];
        ops::softmax_rows(&self.nodes[x].data, &mut data, row);
        Ok(self.push(
            self.nodes[x].shape.clone(),
            data,
            self.nodes[x].requires_grad,
            Op::SoftmaxLast { x },
        ))
    }

    // ---- shape ------------------------------------------------------------

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x].data.len() {
            return Err(SnnError::Dimension(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.nodes[x].shape
            )));
        }
        Ok(self.push(
            shape.to_vec(),
            self.nodes[x].data.clone(),
            self.nodes[x].requires_grad,
            Op::Reshape { x },
        ))
    }

    /// Axis permutation: output axis d carries input axis `perm[d]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let in_shape = &self.nodes[x].shape;
        if perm.len() != in_shape.len() {
            return Err(SnnError::Dimension(format!(
                "permute {perm:?} rank mismatch with {in_shape:?}"
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(SnnError::Dimension(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let data = permute_data(&self.nodes[x].data, in_shape, perm);
        Ok(self.push(
            out_shape,
            data,
            self.nodes[x].requires_grad,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Select one index along the last axis: `[.., T] -> [.., 1]`.
    pub fn index_last(&mut self, x: NodeId, idx: usize) -> Result<NodeId> {
        let s = &self.nodes[x].shape;
        let t = *s.last().unwrap();
        if idx >= t {
            return Err(SnnError::Dimension(format!(
                "index {idx} out of range for last extent {t}"
            )));
        }
        let rows = self.nodes[x].data.len() / t;
        let data = (0..rows).map(|r| self.nodes[x].data[r * t + idx]).collect();
        let mut shape = s[..s.len() - 1].to_vec();
        shape.push(1);
        Ok(self.push(
            shape,
            data,
            self.nodes[x].requires_grad,
            Op::IndexLast { x, idx },
        ))
    }

    /// Concatenate along the last axis; all parts share leading extents.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(SnnError::Contract("concat_last of zero parts".into()));
        }
        let lead = self.nodes[parts[0]].shape[..self.nodes[parts[0]].shape.len() - 1].to_vec();
        let mut total_t = 0;
        for &p in parts {
            let s = &self.nodes[p].shape;
            if s[..s.len() - 1] != lead[..] {
                return Err(SnnError::Dimension(
                    "concat_last: leading extents differ".into(),
                ));
            }
            total_t += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = vec![0.0; rows * total_t];
        let mut off = 0;
        for &p in parts {
            let t = *self.nodes[p].shape.last().unwrap();
            for r in 0..rows {
                data[r * total_t + off..r * total_t + off + t]
                    .copy_from_slice(&self.nodes[p].data[r * t..(r + 1) * t]);
            }
            off += t;
        }
        let mut shape = lead;
        shape.push(total_t);
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            data,
            rg,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
        ))
    }

    // ---- reductions and loss ----------------------------------------------

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f32 = self.nodes[x].data.iter().sum();
        self.push(
            vec![1],
            vec![s],
            self.nodes[x].requires_grad,
            Op::SumAll { x },
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].data.len() as f32;
        let s: f32 = self.nodes[x].data.iter().sum();
        self.push(
            vec![1],
            vec![s / n],
            self.nodes[x].requires_grad,
            Op::MeanAll { x },
        )
    }

    /// Cross-entropy of logits against one-hot targets, mean over the batch.
    /// Probabilities come from a stabilized softmax; logs clamp at 1e-12.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        let s = self.nodes[logits].shape.clone();
        if s.len() != 2 || targets.shape() != s.as_slice() {
            return Err(SnnError::Dimension(format!(
                "cross entropy: logits {s:?} vs targets {:?}",
                targets.shape()
            )));
        }
        for &v in &self.nodes[logits].data {
            if !v.is_finite() {
                return Err(SnnError::Numeric("non-finite logit".into()));
            }
        }
        let (b, k) = (s[0], s[1]);
        for row in targets.data().chunks(k) {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != k {
                return Err(SnnError::Contract(format!(
                    "label row {row:?} is not one-hot"
                )));
            }
        }
        let mut probs = vec![0.0; b * k];
        ops::softmax_rows(&self.nodes[logits].data, &mut probs, k);
        let mut loss = 0.0f64;
        for (pr, yr) in probs.chunks(k).zip(targets.data().chunks(k)) {
            for (p, y) in pr.iter().zip(yr) {
                if *y != 0.0 {
                    loss -= (*y as f64) * (p.max(1e-12) as f64).ln();
                }
            }
        }
        let data = vec![(loss / b as f64) as f32];
        Ok(self.push(
            vec![1],
            data,
            self.nodes[logits].requires_grad,
            Op::CrossEntropyMean {
                logits,
                targets: targets.data().to_vec(),
                probs,
            },
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse accumulation from a scalar loss node. Node gradients are reset
    /// at the start of each call; leaf gradients are read via [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].data.len() != 1 {
            return Err(SnnError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[id].take() else {
                continue;
            };
            self.dispatch_backward(id, &upstream);
            self.grads[id] = Some(upstream);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId, f: impl FnOnce(&mut [f32])) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let n = self.nodes[id].data.len();
        let g = self.grads[id].get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn dispatch_backward(&mut self, id: NodeId, up: &[f32]) {
        match self.nodes[id].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, |g| add_into(g, up));
                self.acc(b, |g| add_into(g, up));
            }
            Op::Sub(a, b) => {
                self.acc(a, |g| add_into(g, up));
                self.acc(b, |g| sub_into(g, up));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.nodes[a].data.clone(), self.nodes[b].data.clone());
                self.acc(a, |g| mul_add_into(g, up, &bd));
                self.acc(b, |g| mul_add_into(g, up, &ad));
            }
            Op::AddBroadcast(a, b) => {
                let bn = self.nodes[b].data.len();
                self.acc(a, |g| add_into(g, up));
                self.acc(b, |g| {
                    for (i, u) in up.iter().enumerate() {
                        g[i % bn] += u;
                    }
                });
            }
            Op::MulScalar(a, s) => {
                let sv = self.nodes[s].data[0];
                let ad = self.nodes[a].data.clone();
                self.acc(a, |g| {
                    for (gi, u) in g.iter_mut().zip(up) {
                        *gi += u * sv;
                    }
                });
                self.acc(s, |g| {
                    let mut dot = 0.0;
                    for (u, x) in up.iter().zip(&ad) {
                        dot += u * x;
                    }
                    g[0] += dot;
                });
            }
            Op::Scale(a, c) => {
                self.acc(a, |g| {
                    for (gi, u) in g.iter_mut().zip(up) {
                        *gi += u * c;
                    }
                });
            }
            Op::Relu(a) => {
                let mask: Vec<f32> = self.nodes[a]
                    .data
                    .iter()
                    .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                self.acc(a, |g| mul_add_into(g, up, &mask));
            }
            Op::Heaviside { .. } => {}
            Op::Spike {
                input, surrogate, ..
            } => {
                let sigmoid_slope = |alpha: f32, u: f32| {
                    let s = 1.0 / (1.0 + (-alpha * u).exp());
                    alpha * s * (1.0 - s)
                };
                let factor: Vec<f32> = self.nodes[input]
                    .data
                    .iter()
                    .zip(&self.nodes[id].data)
                    .map(|(&u, &o)| match surrogate {
                        Surrogate::Rect { lo, hi } => {
                            if u > lo && u < hi {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Surrogate::Sigmoid { alpha } => sigmoid_slope(alpha, u),
                        Surrogate::SigmoidGated { alpha } => {
                            if o == 1.0 {
                                sigmoid_slope(alpha, u)
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                self.acc(input, |g| mul_add_into(g, up, &factor));
            }
            Op::Matmul { lhs, rhs } => {
                let dims = ops::batched_dims(&self.nodes[lhs].shape, &self.nodes[rhs].shape)
                    .expect("matmul dims revalidated");
                let mut da = vec![0.0; self.nodes[lhs].data.len()];
                let mut db = vec![0.0; self.nodes[rhs].data.len()];
                ops::matmul_backward(
                    &self.nodes[lhs].data,
                    &self.nodes[rhs].data,
                    up,
                    &dims,
                    &mut da,
                    &mut db,
                );
                self.acc(lhs, |g| add_into(g, &da));
                self.acc(rhs, |g| add_into(g, &db));
            }
            Op::Conv2dSame { x, w, bias } => {
                let d = ConvDims::same(&self.nodes[x].shape, &self.nodes[w].shape)
                    .expect("conv dims revalidated");
                let mut dx = vec![0.0; self.nodes[x].data.len()];
                let mut dw = vec![0.0; self.nodes[w].data.len()];
                let mut db = vec![0.0; self.nodes[bias].data.len()];
                ops::conv2d_same_backward(
                    &self.nodes[x].data,
                    &self.nodes[w].data,
                    up,
                    &d,
                    &mut dx,
                    &mut dw,
                    &mut db,
                );
                self.acc(x, |g| add_into(g, &dx));
                self.acc(w, |g| add_into(g, &dw));
                self.acc(bias, |g| add_into(g, &db));
            }
            Op::MaxPool2d { x, argmax } => {
                self.acc(x, |g| {
                    for (o, &src) in argmax.iter().enumerate() {
                        g[src as usize] += up[o];
                    }
                });
            }
            Op::AvgPool2d { x } => {
                let s = &self.nodes[id].shape;
                let (b, c, oh, ow) = (s[0], s[1], s[2], s[3]);
                let (h, w) = (oh * 2, ow * 2);
                self.acc(x, |g| {
                    for bc in 0..b * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let u = up[bc * oh * ow + oy * ow + ox] * 0.25;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        g[bc * h * w + (oy * 2 + dy) * w + ox * 2 + dx] += u;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                let s = self.nodes[x].shape.clone();
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                let n = (b * h * w) as f32;
                let xd = self.nodes[x].data.clone();
                let gd = self.nodes[gamma].data.clone();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for ci in 0..c {
                    for bi in 0..b {
                        let base = (bi * c + ci) * h * w;
                        for i in base..base + h * w {
                            let xh = (xd[i] - mean[ci]) * inv_std[ci];
                            dgamma[ci] += up[i] * xh;
                            dbeta[ci] += up[i];
                        }
                    }
                }
                self.acc(gamma, |g| add_into(g, &dgamma));
                self.acc(beta, |g| add_into(g, &dbeta));
                self.acc(x, |g| {
                    for ci in 0..c {
                        let k = gd[ci] * inv_std[ci];
                        for bi in 0..b {
                            let base = (bi * c + ci) * h * w;
                            for i in base..base + h * w {
                                if train {
                                    let xh = (xd[i] - mean[ci]) * inv_std[ci];
                                    g[i] +=
                                        k * (up[i] - dbeta[ci] / n - xh * dgamma[ci] / n);
                                } else {
                                    g[i] += k * up[i];
                                }
                            }
                        }
                    }
                });
            }
            Op::SoftmaxLast { x } => {
                let row = *self.nodes[id].shape.last().unwrap();
                let y = self.nodes[id].data.clone();
                self.acc(x, |g| {
                    for r in 0..y.len() / row {
                        let yr = &y[r * row..(r + 1) * row];
                        let ur = &up[r * row..(r + 1) * row];
                        let dot: f32 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                        for i in 0..row {
                            g[r * row + i] += yr[i] * (ur[i] - dot);
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                self.acc(x, |g| add_into(g, up));
            }
            Op::Permute { x, perm } => {
                let out_shape = self.nodes[id].shape.clone();
                let inv = invert_perm(&perm);
                let g_in = permute_data(up, &out_shape, &inv);
                self.acc(x, |g| add_into(g, &g_in));
            }
            Op::IndexLast { x, idx } => {
                let t = *self.nodes[x].shape.last().unwrap();
                self.acc(x, |g| {
                    for (r, u) in up.iter().enumerate() {
                        g[r * t + idx] += u;
                    }
                });
            }
            Op::ConcatLast { parts } => {
                let total_t = *self.nodes[id].shape.last().unwrap();
                let rows = self.nodes[id].data.len() / total_t;
                let mut off = 0;
                for &p in &parts {
                    let t = *self.nodes[p].shape.last().unwrap();
                    let start = off;
                    self.acc(p, |g| {
                        for r in 0..rows {
                            for i in 0..t {
                                g[r * t + i] += up[r * total_t + start + i];
                            }
                        }
                    });
                    off += t;
                }
            }
            Op::SumAll { x } => {
                let u = up[0];
                self.acc(x, |g| g.iter_mut().for_each(|v| *v += u));
            }
            Op::MeanAll { x } => {
                let u = up[0] / self.nodes[x].data.len() as f32;
                self.acc(x, |g| g.iter_mut().for_each(|v| *v += u));
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                probs,
            } => {
                let b = self.nodes[logits].shape[0] as f32;
                let u = up[0];
                self.acc(logits, |g| {
                    for i in 0..g.len() {
                        g[i] += u * (probs[i] - targets[i]) / b;
                    }
                });
            }
        }
    }
}

fn pool_dims(s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if s.len() != 4 {
        return Err(SnnError::Dimension(format!(
            "pooling expects [B,C,H,W], got {s:?}"
        )));
    }
    if s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(SnnError::Dimension(format!(
            "pooling with window (2,2) needs even extents, got {}x{}",
            s[2], s[3]
        )));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (d, &p) in perm.iter().enumerate() {
        inv[p] = d;
    }
    inv
}

fn permute_data(data: &[f32], in_shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let mut out = vec![0.0; data.len()];
    let mut coords = vec![0usize; rank];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut rem = o;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        for d in 0..rank {
            src += coords[d] * in_strides[perm[d]];
        }
        *slot = data[src];
    }
    out
}

fn add_into(g: &mut [f32], u: &[f32]) {
    for (gi, ui) in g.iter_mut().zip(u) {
        *gi += ui;
    }
}

fn sub_into(g: &mut [f32], u: &[f32]) {
    for (gi, ui) in g.iter_mut().zip(u) {
        *gi -= ui;
    }
}

fn mul_add_into(g: &mut [f32], u: &[f32], other: &[f32]) {
    for ((gi, ui), oi) in g.iter_mut().zip(u).zip(other) {
        *gi += ui * oi;
    }
}
