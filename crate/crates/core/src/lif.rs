//! Leaky integrate-and-fire neurons in two forms.
//!
//! The closed-form ("non-iterative") model computes every time step at once:
//! the decaying influence of past inputs is a product with an upper-triangular
//! leak matrix, the soft-reset influence of past spikes is a product with a
//! shifted, threshold-scaled variant of it, and the spike train is obtained by
//! thresholding a bound-based estimate of the membrane potential. Backward
//! passes use a rectangular surrogate window in place of the threshold's zero
//! derivative.
//!
//! The conventional recurrent model and an exact causal solver are kept as
//! references: the recurrent model for gradient-behaviour comparisons, the
//! causal solver as the ground-truth oracle for the closed form.
//!
//! Time indexing convention: an input at step t contributes to step t with
//! full weight (leak factor 1) and decays into later steps; a spike at step t
//! subtracts the threshold from step t+1 with full weight. The recurrent
//! reference is built to the same convention:
//! `u[t] = lambda*u[t-1] - v_th*o[t-1] + x[t]`.

use crate::error::{Result, SnnError};
use crate::tensor::{NodeId, Surrogate, Tape, Tensor};

/// The pair of triangular matrices that define closed-form LIF dynamics,
/// together with the scalar parameters they were built from.
///
/// For a sequence of `t_n + 1` steps and leak factor `L(t) = exp(-t*dt/tau)`:
/// `l_in[i][j] = L(j - i)` for `j >= i` (diagonal all ones, zero below), and
/// `l_out[i][j] = v_th * l_in[i][j-1]` for `j > i` (zero diagonal).
#[derive(Debug, Clone)]
pub struct LeakyKernel {
    pub tau: f32,
    pub delta_t: f32,
    pub v_th: f32,
    pub t_n: usize,
    l_in: Tensor,
    l_out: Tensor,
}

impl LeakyKernel {
    pub fn new(tau: f32, delta_t: f32, v_th: f32, t_n: usize) -> Result<Self> {
        if tau <= 0.0 || delta_t <= 0.0 || v_th <= 0.0 {
            return Err(SnnError::Config(format!(
                "leaky kernel needs positive tau, delta_t, v_th; got ({tau}, {delta_t}, {v_th})"
            )));
        }
        let steps = t_n + 1;
        let mut l_in = vec![0.0f32; steps * steps];
        let mut l_out = vec![0.0f32; steps * steps];
        for i in 0..steps {
            for j in i..steps {
                l_in[i * steps + j] = (-((j - i) as f32) * delta_t / tau).exp();
            }
            for j in (i + 1)..steps {
                l_out[i * steps + j] = v_th * l_in[i * steps + (j - 1)];
            }
        }
        Ok(LeakyKernel {
            tau,
            delta_t,
            v_th,
            t_n,
            l_in: Tensor::new(vec![steps, steps], l_in)?,
            l_out: Tensor::new(vec![steps, steps], l_out)?,
        })
    }

    /// Build from a per-step decay factor `lambda = exp(-delta_t/tau)`.
    pub fn from_decay(lambda: f32, v_th: f32, t_n: usize) -> Result<Self> {
        if !(0.0 < lambda && lambda < 1.0) {
            return Err(SnnError::Config(format!(
                "decay factor must lie in (0,1), got {lambda}"
            )));
        }
        Self::new(-1.0 / lambda.ln(), 1.0, v_th, t_n)
    }

    /// Assemble a kernel from explicit matrices without validation. For
    /// checker tests that need deliberately malformed kernels; the structural
    /// invariants are enforced by `checks::kernel_invariant_violation`.
    pub fn with_matrices(
        tau: f32,
        delta_t: f32,
        v_th: f32,
        t_n: usize,
        l_in: Tensor,
        l_out: Tensor,
    ) -> Self {
        LeakyKernel {
            tau,
            delta_t,
            v_th,
            t_n,
            l_in,
            l_out,
        }
    }

    /// Number of time steps handled by this kernel.
    pub fn steps(&self) -> usize {
        self.t_n + 1
    }

    /// Per-step decay factor.
    pub fn decay(&self) -> f32 {
        (-self.delta_t / self.tau).exp()
    }

    /// Leak factor after `t` steps.
    pub fn leak(&self, t: usize) -> f32 {
        (-(t as f32) * self.delta_t / self.tau).exp()
    }

    pub fn l_in(&self) -> &Tensor {
        &self.l_in
    }

    pub fn l_out(&self) -> &Tensor {
        &self.l_out
    }

    fn check_time_axis(&self, shape: &[usize]) -> Result<()> {
        let t = *shape.last().ok_or_else(|| {
            SnnError::Dimension("spiking input needs at least one axis".into())
        })?;
        if t != self.steps() {
            return Err(SnnError::Dimension(format!(
                "time axis {t} does not match kernel steps {}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// A tensor constrained to {0,1} values.
#[derive(Debug, Clone)]
pub struct SpikeTrain(Tensor);

impl SpikeTrain {
    pub fn new(t: Tensor) -> Result<Self> {
        if !t.is_binary() {
            return Err(SnnError::Contract(
                "spike train holds a value outside {0,1}".into(),
            ));
        }
        Ok(SpikeTrain(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Mean firing rate (fraction of ones).
    pub fn rate(&self) -> f32 {
        self.0.mean()
    }
}

/// Surrogate window used at both threshold sites of the closed-form model:
/// derivative 1 on membrane values in (0, 1), 0 elsewhere.
pub const RECT_WINDOW: Surrogate = Surrogate::Rect { lo: 0.0, hi: 1.0 };

/// Closed-form spiking forward on the tape. The last axis of `x_weighted` is
/// time; all leading axes are independent neurons. Returns (spikes, membrane).
///
/// Cost is two matrix products, two thresholdings and one subtraction,
/// independent of the number of time steps in control flow.
pub fn non_iterative_forward(
    tape: &mut Tape,
    x_weighted: NodeId,
    kernel: &LeakyKernel,
) -> Result<(NodeId, NodeId)> {
    let e_in = membrane_contribution(tape, x_weighted, kernel)?;
    non_iterative_from_membrane(tape, e_in, kernel)
}

/// The input-effect product alone: weighted input times the leak matrix.
/// Exposed so a per-channel normalization can be applied to the membrane
/// contribution before thresholding.
pub fn membrane_contribution(
    tape: &mut Tape,
    x_weighted: NodeId,
    kernel: &LeakyKernel,
) -> Result<NodeId> {
    kernel.check_time_axis(tape.shape(x_weighted))?;
    let l_in = tape.constant(&kernel.l_in);
    matmul_time(tape, x_weighted, l_in)
}

/// Closed-form spiking given an already-computed (optionally normalized)
/// membrane contribution `e_in`. Split out so a per-channel normalization
/// can sit between the input product and the thresholding.
pub fn non_iterative_from_membrane(
    tape: &mut Tape,
    e_in: NodeId,
    kernel: &LeakyKernel,
) -> Result<(NodeId, NodeId)> {
    kernel.check_time_axis(tape.shape(e_in))?;
    let l_out = tape.constant(&kernel.l_out);
    let first = tape.spike(e_in, kernel.v_th, RECT_WINDOW);
    let e_out = matmul_time(tape, first, l_out)?;
    let u = tape.sub(e_in, e_out)?;
    let o = tape.spike(u, kernel.v_th, RECT_WINDOW);
    Ok((o, u))
}

/// Multiply along the time axis: views `[.., T]` as `[.., 1, T]`, applies the
/// `[T, T]` matrix on the right, and restores the original shape.
fn matmul_time(tape: &mut Tape, x: NodeId, m: NodeId) -> Result<NodeId> {
    let shape = tape.shape(x).to_vec();
    let t = *shape.last().unwrap();
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let flat = tape.reshape(x, &[rows, t])?;
    let prod = tape.matmul(flat, m)?;
    tape.reshape(prod, &shape)
}

/// Standalone backward rule of the closed-form model: given the upstream
/// gradient on the spike output plus the saved membrane values, produce the
/// gradient with respect to the weighted input. The rectangular window is
/// applied at both threshold sites and the result is chained through the two
/// triangular products. Kept as an independent route for cross-checking the
/// tape's composition.
pub fn nilif_input_grad(
    upstream: &[f32],
    u: &Tensor,
    e_in: &Tensor,
    kernel: &LeakyKernel,
) -> Vec<f32> {
    let t = kernel.steps();
    let rows = u.numel() / t;
    let l_in = kernel.l_in.data();
    let l_out = kernel.l_out.data();
    let mut dx = vec![0.0f32; u.numel()];
    let rect = |v: f32| if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 };
    let mut du = vec![0.0f32; t];
    let mut de = vec![0.0f32; t];
    for r in 0..rows {
        let u_row = &u.data()[r * t..(r + 1) * t];
        let e_row = &e_in.data()[r * t..(r + 1) * t];
        let up_row = &upstream[r * t..(r + 1) * t];
        for j in 0..t {
            du[j] = up_row[j] * rect(u_row[j]);
        }
        // dE = dU - rect(E) * (dU . L_out^T)
        for i in 0..t {
            let mut s = 0.0;
            for j in 0..t {
                s += du[j] * l_out[i * t + j];
            }
            de[i] = du[i] - rect(e_row[i]) * s;
        }
        // dX = dE . L_in^T
        let dx_row = &mut dx[r * t..(r + 1) * t];
        for i in 0..t {
            let mut s = 0.0;
            for j in 0..t {
                s += de[j] * l_in[i * t + j];
            }
            dx_row[i] = s;
        }
    }
    dx
}

/// Closed-form solve without a tape. Same arithmetic route as the tape
/// version (two triangular products and two thresholdings).
pub fn nilif_solve(x_weighted: &Tensor, kernel: &LeakyKernel) -> Result<(SpikeTrain, Tensor)> {
    kernel.check_time_axis(x_weighted.shape())?;
    let t = kernel.steps();
    let rows = x_weighted.numel() / t;
    let dims = crate::tensor::matmul_shapes(&[rows, t], &[t, t])?;
    debug_assert_eq!(dims, vec![rows, t]);
    let e_in = matmul_flat(x_weighted.data(), kernel.l_in.data(), rows, t);
    let first: Vec<f32> = e_in
        .iter()
        .map(|&v| if v > kernel.v_th { 1.0 } else { 0.0 })
        .collect();
    let e_out = matmul_flat(&first, kernel.l_out.data(), rows, t);
    let u: Vec<f32> = e_in.iter().zip(&e_out).map(|(a, b)| a - b).collect();
    let o: Vec<f32> = u
        .iter()
        .map(|&v| if v > kernel.v_th { 1.0 } else { 0.0 })
        .collect();
    let shape = x_weighted.shape().to_vec();
    Ok((
        SpikeTrain::new(Tensor::new(shape.clone(), o)?)?,
        Tensor::new(shape, u)?,
    ))
}

fn matmul_flat(x: &[f32], m: &[f32], rows: usize, t: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * t];
    for r in 0..rows {
        let x_row = &x[r * t..(r + 1) * t];
        let o_row = &mut out[r * t..(r + 1) * t];
        for (i, &xv) in x_row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let m_row = &m[i * t..(i + 1) * t];
            for j in 0..t {
                o_row[j] += xv * m_row[j];
            }
        }
    }
    out
}

/// Exact causal solution of the soft-reset dynamics, step by step: each
/// spike decision sees only earlier spikes. Forward-only; this is the
/// ground-truth oracle the closed-form approximation is measured against.
pub fn exact_lif_solve(x_weighted: &Tensor, kernel: &LeakyKernel) -> Result<(SpikeTrain, Tensor)> {
    kernel.check_time_axis(x_weighted.shape())?;
    let t = kernel.steps();
    let lambda = kernel.decay();
    let v_th = kernel.v_th;
    let rows = x_weighted.numel() / t;
    let mut o = vec![0.0f32; rows * t];
    let mut u = vec![0.0f32; rows * t];
    for r in 0..rows {
        let x_row = &x_weighted.data()[r * t..(r + 1) * t];
        let mut e_in = 0.0f32;
        let mut e_out = 0.0f32;
        let mut fired = 0.0f32;
        for step in 0..t {
            e_in = lambda * e_in + x_row[step];
            e_out = lambda * e_out + v_th * fired;
            let pot = e_in - e_out;
            fired = if pot > v_th { 1.0 } else { 0.0 };
            u[r * t + step] = pot;
            o[r * t + step] = fired;
        }
    }
    let shape = x_weighted.shape().to_vec();
    Ok((
        SpikeTrain::new(Tensor::new(shape.clone(), o)?)?,
        Tensor::new(shape, u)?,
    ))
}

/// Recurrent LIF reference with soft reset and a sigmoid surrogate gradient.
#[derive(Debug, Clone, Copy)]
pub struct IterativeLif {
    pub lambda: f32,
    pub v_th: f32,
    pub surrogate_alpha: f32,
}

impl IterativeLif {
    pub fn new(lambda: f32, v_th: f32, surrogate_alpha: f32) -> Result<Self> {
        if !(0.0 < lambda && lambda < 1.0) {
            return Err(SnnError::Config(format!(
                "decay rate must lie in (0,1), got {lambda}"
            )));
        }
        Ok(IterativeLif {
            lambda,
            v_th,
            surrogate_alpha,
        })
    }

    /// Consistency constructor: same decay per step as `kernel`.
    pub fn from_kernel(kernel: &LeakyKernel, surrogate_alpha: f32) -> Self {
        IterativeLif {
            lambda: kernel.decay(),
            v_th: kernel.v_th,
            surrogate_alpha,
        }
    }
}

/// Recurrent forward on the tape, one set of nodes per time step. The spike
/// output carries the sigmoid surrogate; the soft-reset path inside the
/// recurrence is gated by the spike, so a silent step leaves the membrane
/// chain's gradient untouched (each hop contributes exactly the decay rate).
pub fn iterative_forward(
    tape: &mut Tape,
    x_weighted: NodeId,
    layer: &IterativeLif,
) -> Result<(NodeId, NodeId)> {
    let t_len = *tape
        .shape(x_weighted)
        .last()
        .ok_or_else(|| SnnError::Dimension("iterative input needs a time axis".into()))?;
    let alpha = layer.surrogate_alpha;
    let mut prev: Option<(NodeId, NodeId)> = None;
    let mut us = Vec::with_capacity(t_len);
    let mut os = Vec::with_capacity(t_len);
    for step in 0..t_len {
        let x_t = tape.index_last(x_weighted, step)?;
        let u_t = match prev {
            None => x_t,
            Some((u_prev, o_prev)) => {
                let decayed = tape.scale(u_prev, layer.lambda);
                let reset = tape.scale(o_prev, layer.v_th);
                let held = tape.sub(decayed, reset)?;
                tape.add(held, x_t)?
            }
        };
        let o_reset = tape.spike(u_t, layer.v_th, Surrogate::SigmoidGated { alpha });
        let o_out = tape.spike(u_t, layer.v_th, Surrogate::Sigmoid { alpha });
        us.push(u_t);
        os.push(o_out);
        prev = Some((u_t, o_reset));
    }
    Ok((tape.concat_last(&os)?, tape.concat_last(&us)?))
}

/// Recurrent solve without a tape (forward only).
pub fn iterative_solve(x_weighted: &Tensor, layer: &IterativeLif) -> Result<(SpikeTrain, Tensor)> {
    let t = *x_weighted
        .shape()
        .last()
        .ok_or_else(|| SnnError::Dimension("iterative input needs a time axis".into()))?;
    let rows = x_weighted.numel() / t;
    let mut o = vec![0.0f32; rows * t];
    let mut u = vec![0.0f32; rows * t];
    for r in 0..rows {
        let x_row = &x_weighted.data()[r * t..(r + 1) * t];
        let mut u_prev = 0.0f32;
        let mut o_prev = 0.0f32;
        for step in 0..t {
            let pot = layer.lambda * u_prev - layer.v_th * o_prev + x_row[step];
            let fired = if pot > layer.v_th { 1.0 } else { 0.0 };
            u[r * t + step] = pot;
            o[r * t + step] = fired;
            u_prev = pot;
            o_prev = fired;
        }
    }
    let shape = x_weighted.shape().to_vec();
    Ok((
        SpikeTrain::new(Tensor::new(shape.clone(), o)?)?,
        Tensor::new(shape, u)?,
    ))
}

/// Mean firing rates of the three dynamics over a batch of weighted inputs.
pub fn sparsity_compare(
    batch: &Tensor,
    kernel: &LeakyKernel,
    surrogate_alpha: f32,
) -> Result<(f32, f32, f32)> {
    let (o_ni, _) = nilif_solve(batch, kernel)?;
    let (o_exact, _) = exact_lif_solve(batch, kernel)?;
    let layer = IterativeLif::from_kernel(kernel, surrogate_alpha);
    let (o_iter, _) = iterative_solve(batch, &layer)?;
    Ok((o_ni.rate(), o_exact.rate(), o_iter.rate()))
}

/// Elementwise spike bounds implied by the input-effect matrix alone:
/// lower = g(E_in - ones * l_out), upper = g(E_in). Any causal soft-reset
/// spike train lies between them.
pub fn spike_bounds(x_weighted: &Tensor, kernel: &LeakyKernel) -> Result<(SpikeTrain, SpikeTrain)> {
    kernel.check_time_axis(x_weighted.shape())?;
    let t = kernel.steps();
    let rows = x_weighted.numel() / t;
    let e_in = matmul_flat(x_weighted.data(), kernel.l_in.data(), rows, t);
    let ones = vec![1.0f32; t];
    let ones_lout = matmul_flat(&ones, kernel.l_out.data(), 1, t);
    let mut lower = vec![0.0f32; rows * t];
    let mut upper = vec![0.0f32; rows * t];
    for r in 0..rows {
        for j in 0..t {
            let e = e_in[r * t + j];
            upper[r * t + j] = if e > kernel.v_th { 1.0 } else { 0.0 };
            lower[r * t + j] = if e - ones_lout[j] > kernel.v_th { 1.0 } else { 0.0 };
        }
    }
    let shape = x_weighted.shape().to_vec();
    Ok((
        SpikeTrain::new(Tensor::new(shape.clone(), lower)?)?,
        SpikeTrain::new(Tensor::new(shape, upper)?)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN2: f32 = std::f32::consts::LN_2;

    fn kernel_half(v_th: f32, t_n: usize) -> LeakyKernel {
        // delta_t/tau = ln 2 so the per-step decay is exactly 1/2
        LeakyKernel::new(1.0 / LN2, 1.0, v_th, t_n).unwrap()
    }

    #[test]
    fn l_in_closed_form() {
        let k = kernel_half(0.5, 2);
        let want = [1.0, 0.5, 0.25, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0];
        for (got, want) in k.l_in().data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn l_out_is_shifted_scaled_l_in() {
        let k = kernel_half(0.5, 2);
        let want = [0.0, 0.5, 0.25, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0];
        for (got, want) in k.l_out().data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        // generic invariant on a second kernel
        let k = LeakyKernel::new(3.0, 1.0, 0.7, 5).unwrap();
        let t = k.steps();
        for i in 0..t {
            assert_eq!(k.l_out().data()[i * t + i], 0.0);
            for j in (i + 1)..t {
                let want = k.v_th * k.l_in().data()[i * t + (j - 1)];
                assert!((k.l_out().data()[i * t + j] - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn degenerate_single_step() {
        let k = kernel_half(0.5, 0);
        assert_eq!(k.l_in().data(), &[1.0]);
        assert_eq!(k.l_out().data(), &[0.0]);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LeakyKernel::new(0.0, 1.0, 0.5, 3).is_err());
        assert!(LeakyKernel::new(1.0, -1.0, 0.5, 3).is_err());
        assert!(LeakyKernel::new(1.0, 1.0, 0.0, 3).is_err());
    }

    #[test]
    fn zero_input_stays_silent() {
        let k = kernel_half(0.5, 9);
        let x = Tensor::zeros(&[4, 10]);
        let (o, u) = nilif_solve(&x, &k).unwrap();
        assert!(o.tensor().data().iter().all(|&v| v == 0.0));
        assert!(u.data().iter().all(|&v| v == 0.0));
        let (oe, ue) = exact_lif_solve(&x, &k).unwrap();
        assert!(oe.tensor().data().iter().all(|&v| v == 0.0));
        assert!(ue.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pulse_worked_example() {
        // x = [1,0,0] with decay 1/2 and v_th = 0.5:
        // E_in = [1,.5,.25], first threshold = [1,0,0] (strict at 0.5),
        // U = E_in - [1,0,0]*L_out = [1,0,0], O = [1,0,0].
        let k = kernel_half(0.5, 2);
        let x = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let (o, u) = nilif_solve(&x, &k).unwrap();
        assert_eq!(o.tensor().data(), &[1.0, 0.0, 0.0]);
        for (got, want) in u.data().iter().zip(&[1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-6);
        }
        // the causal oracle agrees here
        let (oe, _) = exact_lif_solve(&x, &k).unwrap();
        assert_eq!(oe.tensor().data(), o.tensor().data());
    }

    #[test]
    fn exact_solve_soft_reset_example() {
        let k = kernel_half(0.5, 3);
        let x = Tensor::new(vec![1, 4], vec![1.2, 0.0, 0.0, 0.0]).unwrap();
        let (o, u) = exact_lif_solve(&x, &k).unwrap();
        let want_u = [1.2, 0.1, 0.05, 0.025];
        for (got, want) in u.data().iter().zip(&want_u) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert_eq!(o.tensor().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_is_strict() {
        let k = kernel_half(0.5, 0);
        let x = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let (o, _) = nilif_solve(&x, &k).unwrap();
        assert_eq!(o.tensor().data(), &[0.0]);
    }

    #[test]
    fn closed_form_never_exceeds_input_bound() {
        let k = kernel_half(0.5, 199);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::rand_uniform(&[16, 200], -1.0, 1.0, &mut rng);
        let (o, _) = nilif_solve(&x, &k).unwrap();
        let (_, upper) = spike_bounds(&x, &k).unwrap();
        for (a, b) in o.tensor().data().iter().zip(upper.tensor().data()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn causal_oracle_within_bounds() {
        for &t_n in &[9usize, 49] {
            let k = kernel_half(0.5, t_n);
            let mut rng = ChaCha8Rng::seed_from_u64(5 + t_n as u64);
            let x = Tensor::rand_uniform(&[50, t_n + 1], -1.0, 1.0, &mut rng);
            let (o, _) = exact_lif_solve(&x, &k).unwrap();
            let (lower, upper) = spike_bounds(&x, &k).unwrap();
            for ((l, o), u) in lower
                .tensor()
                .data()
                .iter()
                .zip(o.tensor().data())
                .zip(upper.tensor().data())
            {
                assert!(l <= o && o <= u);
            }
        }
    }

    #[test]
    fn no_fire_inputs_agree_across_dynamics() {
        let k = kernel_half(0.5, 49);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // scaled so the accumulated potential can never reach the threshold
        let x = Tensor::rand_uniform(&[8, 50], -0.2, 0.2, &mut rng);
        let (o_exact, u_exact) = exact_lif_solve(&x, &k).unwrap();
        assert!(o_exact.tensor().data().iter().all(|&v| v == 0.0));
        let (o_ni, u_ni) = nilif_solve(&x, &k).unwrap();
        assert!(o_ni.tensor().data().iter().all(|&v| v == 0.0));
        let layer = IterativeLif::from_kernel(&k, 4.0);
        let (_, u_iter) = iterative_solve(&x, &layer).unwrap();
        for i in 0..u_exact.numel() {
            assert!((u_exact.data()[i] - u_ni.data()[i]).abs() < 1e-5);
            assert!((u_exact.data()[i] - u_iter.data()[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn tape_forward_matches_solver() {
        let k = kernel_half(0.5, 19);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::rand_uniform(&[3, 4, 20], -1.0, 1.0, &mut rng);
        let (o_ref, u_ref) = nilif_solve(&x, &k).unwrap();
        let mut tape = Tape::new();
        let xn = tape.constant(&x);
        let (o, u) = non_iterative_forward(&mut tape, xn, &k).unwrap();
        assert_eq!(tape.data(o), o_ref.tensor().data());
        for (a, b) in tape.data(u).iter().zip(u_ref.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tape_gradient_matches_standalone_rule() {
        let k = kernel_half(0.5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::rand_uniform(&[4, 10], -1.0, 1.0, &mut rng).with_requires_grad();
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let (o, u) = non_iterative_forward(&mut tape, xn, &k).unwrap();
        // random linear functional of the spike output
        let w = Tensor::rand_uniform(&[4, 10], 0.5, 1.5, &mut rng);
        let wn = tape.constant(&w);
        let prod = tape.mul(o, wn).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        let got = tape.grad(xn).unwrap();

        let e_in = {
            let mut t2 = Tape::new();
            let xc = t2.constant(&x);
            let l_in = t2.constant(k.l_in());
            let e = matmul_time(&mut t2, xc, l_in).unwrap();
            t2.tensor(e)
        };
        let u_t = tape.tensor(u);
        let want = nilif_input_grad(w.data(), &u_t, &e_in, &k);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn rect_window_blocks_saturated_membranes() {
        // all membrane values outside (0,1) -> zero input gradient
        let k = kernel_half(0.5, 3);
        let x = Tensor::new(vec![1, 4], vec![3.0, 3.0, 3.0, 3.0])
            .unwrap()
            .with_requires_grad();
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let (o, u) = non_iterative_forward(&mut tape, xn, &k).unwrap();
        for &v in tape.data(u) {
            assert!(!(0.0 < v && v < 1.0) || v == 0.0, "membrane {v} inside window");
        }
        let loss = tape.sum_all(o);
        tape.backward(loss).unwrap();
        assert!(tape.grad(xn).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn open_window_passes_gradient_through() {
        let k = kernel_half(0.5, 0);
        let x = Tensor::new(vec![1, 1], vec![0.6]).unwrap().with_requires_grad();
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let (o, _) = non_iterative_forward(&mut tape, xn, &k).unwrap();
        let loss = tape.sum_all(o);
        tape.backward(loss).unwrap();
        // u = 0.6 lies in (0,1) at both sites; L_out is zero for one step
        assert!((tape.grad(xn).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iterative_subthreshold_matches_matrix_form() {
        let k = kernel_half(0.5, 19);
        let layer = IterativeLif::from_kernel(&k, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::rand_uniform(&[4, 20], -0.2, 0.2, &mut rng);
        let (_, u_iter) = iterative_solve(&x, &layer).unwrap();
        // with no firing the membrane equals the input-effect row
        let e_in = matmul_flat(x.data(), k.l_in().data(), 4, 20);
        for (a, b) in u_iter.data().iter().zip(&e_in) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn iterative_tape_matches_solver_and_decays_gradient() {
        let layer = IterativeLif::new(0.9, 0.5, 4.0).unwrap();
        let t_len = 30usize;
        let mut x_data = vec![0.0f32; t_len];
        x_data[0] = 0.4; // stays subthreshold forever under decay 0.9
        let x = Tensor::new(vec![1, t_len], x_data).unwrap().with_requires_grad();
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let (o, u) = iterative_forward(&mut tape, xn, &layer).unwrap();
        let (o_ref, u_ref) = iterative_solve(&x, &layer).unwrap();
        assert_eq!(tape.data(o), o_ref.tensor().data());
        for (a, b) in tape.data(u).iter().zip(u_ref.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        // contribution of the step-0 input to u[t] is lambda^t
        let probe = tape.index_last(u, 25).unwrap();
        let loss = tape.sum_all(probe);
        tape.backward(loss).unwrap();
        let got = tape.grad(xn).unwrap()[0] as f64;
        let want = (0.9f64).powi(25);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn sparsity_ordering_holds_on_random_batch() {
        let k = kernel_half(0.5, 49);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = Tensor::rand_uniform(&[200, 50], -1.0, 1.0, &mut rng);
        let (ni, exact, iter) = sparsity_compare(&x, &k, 4.0).unwrap();
        assert!(ni <= exact + 1e-7);
        assert!(ni <= iter + 1e-7);
        let zero = Tensor::zeros(&[4, 50]);
        assert_eq!(sparsity_compare(&zero, &k, 4.0).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn time_axis_mismatch_is_rejected() {
        let k = kernel_half(0.5, 9);
        let x = Tensor::zeros(&[2, 8]);
        assert!(matches!(
            nilif_solve(&x, &k),
            Err(SnnError::Dimension(_))
        ));
    }

    #[test]
    fn closed_form_node_count_is_independent_of_time_steps() {
        let mut counts = Vec::new();
        for &t_n in &[9usize, 199] {
            let k = kernel_half(0.5, t_n);
            let x = Tensor::zeros(&[2, t_n + 1]);
            let mut tape = Tape::new();
            let xn = tape.constant(&x);
            let before = tape.len();
            non_iterative_forward(&mut tape, xn, &k).unwrap();
            counts.push(tape.len() - before);
        }
        assert_eq!(counts[0], counts[1]);
    }

    #[test]
    fn random_spike_trains_stay_binary() {
        let k = kernel_half(0.5, 49);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..20 {
            let scale: f32 = rng.gen_range(0.1..3.0);
            let x = Tensor::rand_uniform(&[4, 50], -scale, scale, &mut rng);
            let (o, _) = nilif_solve(&x, &k).unwrap();
            assert!(o.tensor().is_binary());
            let (oe, _) = exact_lif_solve(&x, &k).unwrap();
            assert!(oe.tensor().is_binary());
        }
    }
}
