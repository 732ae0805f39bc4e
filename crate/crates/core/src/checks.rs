//! Executable verification suites: spike-train bound properties, oracle
//! agreement, gradient behaviour of both neuron models, attention contracts,
//! finite-difference validation of every differentiable operation, and the
//! profiler's published constants. The command-line `verify` subcommand and
//! the acceptance tests both run these.

use crate::attention::{score_axis_sums, AttentionConfig, AttentionKind, AttentionLayer};
use crate::data::synth_generate;
use crate::error::{Result, SnnError};
use crate::lif::{
    exact_lif_solve, iterative_forward, membrane_contribution, nilif_solve, sparsity_compare,
    spike_bounds, IterativeLif, LeakyKernel,
};
use crate::model::{build_cnn, build_snn, NetworkFamily, NetworkSpec};
use crate::profiler::{profile_static, EnergyModel, OpClass};
use crate::tensor::{BnMode, NodeId, ParamStore, RunningStats, Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    /// Human-readable measurement, or the first counterexample on failure.
    pub detail: String,
}

impl CheckResult {
    fn new(suite: &'static str, name: impl Into<String>, passed: bool, detail: String) -> Self {
        CheckResult {
            suite,
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub const SUITES: &[&str] = &[
    "props1",
    "nofire",
    "gradients",
    "autodiff",
    "attention",
    "profiler",
    "sparsity",
    "data",
];

/// Run one suite (or all of them with `None`).
pub fn run_suites(filter: Option<&str>) -> Result<Vec<CheckResult>> {
    if let Some(name) = filter {
        if !SUITES.contains(&name) {
            return Err(SnnError::Config(format!(
                "unknown suite {name}; available: {}",
                SUITES.join(", ")
            )));
        }
    }
    let mut results = Vec::new();
    for &suite in SUITES {
        if filter.map_or(false, |f| f != suite) {
            continue;
        }
        match suite {
            "props1" => suite_props1(&mut results),
            "nofire" => suite_nofire(&mut results),
            "gradients" => suite_gradients(&mut results)?,
            "autodiff" => suite_autodiff(&mut results)?,
            "attention" => suite_attention(&mut results)?,
            "profiler" => suite_profiler(&mut results),
            "sparsity" => suite_sparsity(&mut results),
            "data" => suite_data(&mut results),
            _ => unreachable!(),
        }
    }
    Ok(results)
}

// ---- kernel invariants & proposition-1 bounds -----------------------------

/// Validate the structural invariants of the leak matrices. Returns the
/// first violated entry when the kernel is malformed.
pub fn kernel_invariant_violation(kernel: &LeakyKernel) -> Option<String> {
    let t = kernel.steps();
    let (l_in, l_out) = (kernel.l_in().data(), kernel.l_out().data());
    for i in 0..t {
        for j in 0..t {
            let (vin, vout) = (l_in[i * t + j], l_out[i * t + j]);
            if j < i && vin != 0.0 {
                return Some(format!("l_in[{i}][{j}] = {vin}, want 0 below the diagonal"));
            }
            if j == i && vin != 1.0 {
                return Some(format!("l_in[{i}][{j}] = {vin}, want 1 on the diagonal"));
            }
            if j >= i {
                let want = kernel.leak(j - i);
                if (vin - want).abs() > 1e-6 {
                    return Some(format!("l_in[{i}][{j}] = {vin}, want {want}"));
                }
            }
            if j <= i && vout != 0.0 {
                return Some(format!(
                    "l_out[{i}][{j}] = {vout}, want 0 on and below the diagonal"
                ));
            }
            if j > i {
                let want = kernel.v_th * l_in[i * t + (j - 1)];
                if (vout - want).abs() > 1e-6 {
                    return Some(format!("l_out[{i}][{j}] = {vout}, want {want}"));
                }
            }
            if !(0.0..=1.0).contains(&vin) || !(0.0..=kernel.v_th).contains(&vout) {
                return Some(format!(
                    "entry range violation at [{i}][{j}]: l_in={vin}, l_out={vout}"
                ));
            }
        }
    }
    None
}

/// First bound violation of the causal oracle on the given inputs, if any:
/// the exact spike train must lie between g(E_in - ones*L_out) and g(E_in).
pub fn prop1_violation(x: &Tensor, kernel: &LeakyKernel) -> Result<Option<String>> {
    if let Some(v) = kernel_invariant_violation(kernel) {
        return Ok(Some(format!("kernel invariant broken: {v}")));
    }
    let (o, _) = exact_lif_solve(x, kernel)?;
    let (lower, upper) = spike_bounds(x, kernel)?;
    let t = kernel.steps();
    for (i, ((l, o), u)) in lower
        .tensor()
        .data()
        .iter()
        .zip(o.tensor().data())
        .zip(upper.tensor().data())
        .enumerate()
    {
        if !(l <= o && o <= u) {
            let row = i / t;
            let step = i % t;
            let x_row = &x.data()[row * t..(row + 1) * t];
            return Ok(Some(format!(
                "sequence {row}, step {step}: lower={l}, exact={o}, upper={u}, input={x_row:?}"
            )));
        }
    }
    Ok(None)
}

fn suite_props1(out: &mut Vec<CheckResult>) {
    for &t_n in &[9usize, 49, 199] {
        let kernel = LeakyKernel::new(2.0, 1.0, 0.5, t_n).expect("valid kernel");
        let mut rng = ChaCha8Rng::seed_from_u64(100 + t_n as u64);
        let x = Tensor::rand_uniform(&[1000, t_n + 1], -1.0, 1.0, &mut rng);
        let violation = prop1_violation(&x, &kernel).expect("well-formed inputs");
        out.push(CheckResult::new(
            "props1",
            format!("oracle-within-bounds-tn{t_n}"),
            violation.is_none(),
            violation.unwrap_or_else(|| "1000 sequences, zero violations".into()),
        ));
    }
    // the closed form never fires where the input-effect bound is silent
    let kernel = LeakyKernel::new(2.0, 1.0, 0.5, 199).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let x = Tensor::rand_uniform(&[500, 200], -1.0, 1.0, &mut rng);
    let (o, _) = nilif_solve(&x, &kernel).unwrap();
    let (_, upper) = spike_bounds(&x, &kernel).unwrap();
    let ok = o
        .tensor()
        .data()
        .iter()
        .zip(upper.tensor().data())
        .all(|(a, b)| a <= b);
    out.push(CheckResult::new(
        "props1",
        "closed-form-upper-bound",
        ok,
        "closed-form spikes <= g(E_in) elementwise".into(),
    ));
}

// ---- no-fire equivalence and the frozen divergence fixture ----------------

/// Frozen regression fixture: a weighted input train on which the causal
/// oracle fires at steps {4, 9} while the closed form, being sparser, fires
/// only at {4}. Found by searching random binary pulse trains with the
/// causal oracle; kept fixed since.
pub const DIVERGENCE_FIXTURE_LAMBDA: f32 = 0.5;
pub const DIVERGENCE_FIXTURE_VTH: f32 = 0.5;
pub const DIVERGENCE_FIXTURE: [f32; 10] = [
    0.0, 0.27, 0.27, 0.27, 0.27, 0.27, 0.27, 0.27, 0.27, 0.27,
];

pub fn spike_steps(train: &[f32]) -> Vec<usize> {
    train
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v == 1.0).then_some(i))
        .collect()
}

fn suite_nofire(out: &mut Vec<CheckResult>) {
    // scaled inputs that never cross the threshold: all three dynamics agree
    let kernel = LeakyKernel::new(2.0, 1.0, 0.5, 49).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let scale = 0.5 * (1.0 - kernel.decay());
    let x = Tensor::rand_uniform(&[200, 50], -scale, scale, &mut rng);
    let (o_exact, u_exact) = exact_lif_solve(&x, &kernel).unwrap();
    let silent = o_exact.tensor().data().iter().all(|&v| v == 0.0);
    out.push(CheckResult::new(
        "nofire",
        "inputs-stay-subthreshold",
        silent,
        "exact dynamics produce zero spikes".into(),
    ));
    let (o_ni, u_ni) = nilif_solve(&x, &kernel).unwrap();
    let layer = IterativeLif::from_kernel(&kernel, 4.0);
    let (_, u_iter) = crate::lif::iterative_solve(&x, &layer).unwrap();
    let mut max_ni = 0.0f32;
    let mut max_iter = 0.0f32;
    for i in 0..u_exact.numel() {
        max_ni = max_ni.max((u_exact.data()[i] - u_ni.data()[i]).abs());
        max_iter = max_iter.max((u_exact.data()[i] - u_iter.data()[i]).abs());
    }
    let silent_ni = o_ni.tensor().data().iter().all(|&v| v == 0.0);
    out.push(CheckResult::new(
        "nofire",
        "membrane-agreement",
        silent_ni && max_ni < 1e-5 && max_iter < 1e-5,
        format!("max |closed-form - exact| = {max_ni:.2e}, max |recurrent - exact| = {max_iter:.2e}"),
    ));

    let kernel = LeakyKernel::from_decay(DIVERGENCE_FIXTURE_LAMBDA, DIVERGENCE_FIXTURE_VTH, 9).unwrap();
    let x = Tensor::new(vec![1, 10], DIVERGENCE_FIXTURE.to_vec()).unwrap();
    let (o_exact, _) = exact_lif_solve(&x, &kernel).unwrap();
    let (o_ni, _) = nilif_solve(&x, &kernel).unwrap();
    let exact_steps = spike_steps(o_exact.tensor().data());
    let ni_steps = spike_steps(o_ni.tensor().data());
    let subset = ni_steps.iter().all(|s| exact_steps.contains(s));
    let strict = subset && ni_steps.len() < exact_steps.len();
    out.push(CheckResult::new(
        "nofire",
        "closed-form-fires-strict-subset",
        exact_steps == vec![4, 9] && ni_steps == vec![4] && strict,
        format!("exact fires {exact_steps:?}, closed form fires {ni_steps:?}"),
    ));
}

// ---- gradient propositions -------------------------------------------------

fn suite_gradients(out: &mut Vec<CheckResult>) -> Result<()> {
    // geometric decay: contribution of the step-0 input to u[t] is lambda^t
    let layer = IterativeLif::new(0.9, 0.5, 4.0)?;
    for &step in &[10usize, 50, 100] {
        let t_len = step + 1;
        let mut x_data = vec![0.0f32; t_len];
        x_data[0] = 0.4;
        let x = Tensor::new(vec![1, t_len], x_data)?.with_requires_grad();
        let mut tape = Tape::new();
        let xn = tape.leaf(x);
        let (_, u) = iterative_forward(&mut tape, xn, &layer)?;
        let probe = tape.index_last(u, step)?;
        let loss = tape.sum_all(probe);
        tape.backward(loss)?;
        let got = tape.grad(xn).unwrap()[0] as f64;
        let want = (0.9f64).powi(step as i32);
        let ok = (got - want).abs() < 1e-6;
        out.push(CheckResult::new(
            "gradients",
            format!("recurrent-decay-t{step}"),
            ok,
            format!("autodiff {got:.6e} vs lambda^{step} = {want:.6e}"),
        ));
    }

    // non-vanishing closed-form gradient on the adversarial construction:
    // negative drip before one positive pulse keeps every earlier membrane
    // value outside the surrogate window, so du[t]/dw = sum_i x_i * L(t - i)
    let t_n = 199usize;
    let kernel = LeakyKernel::from_decay(0.9, 0.5, t_n)?;
    let mut x_fixed = vec![-1e-4f32; t_n + 1];
    x_fixed[t_n] = 0.4;
    let w_value = 1.0f32;
    // weighted input enters the graph as w * x, with w the trainable leaf
    let w = Tensor::scalar(w_value).with_requires_grad();
    let x = Tensor::new(vec![1, t_n + 1], x_fixed.clone())?;
    let mut tape = Tape::new();
    let wn = tape.leaf(w);
    let xn = tape.constant(&x);
    let xw = tape.mul_scalar(xn, wn)?;
    let e_in = membrane_contribution(&mut tape, xw, &kernel)?;
    let (_, u) = crate::lif::non_iterative_from_membrane(&mut tape, e_in, &kernel)?;
    let probe = tape.index_last(u, t_n)?;
    let loss = tape.sum_all(probe);
    tape.backward(loss)?;
    let got = tape.grad(wn).unwrap()[0] as f64;
    // independent oracle: plain loop over the closed-form leak factors
    let mut want = 0.0f64;
    for (i, &xi) in x_fixed.iter().enumerate() {
        want += xi as f64 * (-((t_n - i) as f64) / kernel.tau as f64).exp();
    }
    let ok = (got - want).abs() < 1e-6 && got.abs() > 1e-3;
    out.push(CheckResult::new(
        "gradients",
        "closed-form-gradient-survives-t199",
        ok,
        format!("autodiff {got:.6e} vs oracle {want:.6e}"),
    ));
    Ok(())
}

// ---- finite-difference validation -------------------------------------------

/// Max deviation between analytic and central-difference gradients,
/// normalized by the largest finite-difference component. The probing loss
/// is a fixed random weighting of the op output; its finite-difference
/// evaluations accumulate in f64 so the comparison sits well above the
/// single-precision noise floor.
pub fn fd_max_rel_err(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
) -> Result<f64> {
    let h = 1e-3f32;
    let weights_for = |n: usize| {
        let mut wrng = ChaCha8Rng::seed_from_u64(77);
        Tensor::rand_uniform(&[n], -1.2, 1.2, &mut wrng)
    };
    let analytic = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad()))
            .collect();
        let out = f(&mut tape, &ids)?;
        let n = tape.numel(out);
        let w = weights_for(n);
        let shape = tape.shape(out).to_vec();
        let wn = {
            let t = Tensor::new(shape, w.data().to_vec())?;
            tape.constant(&t)
        };
        let prod = tape.mul(out, wn)?;
        let loss = tape.sum_all(prod);
        tape.backward(loss)?;
        let grads: Vec<Vec<f32>> = ids
            .iter()
            .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
            .collect();
        grads
    };
    let value = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let w = weights_for(tape.numel(out));
        Ok(tape
            .data(out)
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    };
    let mut max_fd = 0.0f64;
    let mut max_err = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        if analytic[ti].is_empty() {
            continue;
        }
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= h;
            let fd = (value(&plus)? - value(&minus)?) / (2.0 * h as f64);
            max_fd = max_fd.max(fd.abs());
            max_err = max_err.max((analytic[ti][j] as f64 - fd).abs());
        }
    }
    Ok(max_err / max_fd.max(1e-4))
}

fn fd_case(
    out: &mut Vec<CheckResult>,
    suite: &'static str,
    name: &str,
    inputs: &[Tensor],
    f: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
) -> Result<()> {
    let err = fd_max_rel_err(inputs, f)?;
    out.push(CheckResult::new(
        suite,
        name,
        err < 1e-3,
        format!("max relative gradient error {err:.2e}"),
    ));
    Ok(())
}

fn suite_autodiff(out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let r = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::rand_uniform(shape, -1.0, 1.0, rng);

    let a = r(&[4, 5], &mut rng);
    let b = r(&[5, 3], &mut rng);
    fd_case(out, "autodiff", "matmul", &[a, b], &|t, ids| {
        t.matmul(ids[0], ids[1])
    })?;

    let a = r(&[2, 2, 3, 4], &mut rng);
    let b = r(&[2, 2, 4, 3], &mut rng);
    fd_case(out, "autodiff", "matmul-batched", &[a, b], &|t, ids| {
        t.matmul(ids[0], ids[1])
    })?;

    let x = r(&[1, 2, 4, 4], &mut rng);
    let w = r(&[2, 2, 3, 3], &mut rng);
    let bias = r(&[2], &mut rng);
    fd_case(out, "autodiff", "conv2d-same", &[x, w, bias], &|t, ids| {
        t.conv2d_same(ids[0], ids[1], ids[2])
    })?;

    // distinct, well-spaced values keep the pooling argmax stable under
    // perturbation while the loss stays small enough for clean differences
    let mut vals: Vec<f32> = (0..32).map(|i| i as f32 * 0.11 - 1.7).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut rng);
    let x = Tensor::new(vec![1, 2, 4, 4], vals)?;
    fd_case(out, "autodiff", "max-pool", &[x.clone()], &|t, ids| {
        t.max_pool2d(ids[0])
    })?;
    fd_case(out, "autodiff", "avg-pool", &[x], &|t, ids| {
        t.avg_pool2d(ids[0])
    })?;

    let x = r(&[3, 2, 2, 2], &mut rng);
    let gamma = Tensor::rand_uniform(&[2], 0.5, 1.5, &mut rng);
    let beta = r(&[2], &mut rng);
    fd_case(out, "autodiff", "batchnorm-train", &[x, gamma, beta], &|t, ids| {
        let mut stats = RunningStats::new(2);
        t.batchnorm2d(ids[0], ids[1], ids[2], &mut stats, BnMode::Train)
    })?;

    let x = r(&[3, 5], &mut rng);
    fd_case(out, "autodiff", "softmax", &[x], &|t, ids| {
        t.softmax_lastdim(ids[0])
    })?;

    let a = r(&[3, 4], &mut rng);
    let b = r(&[3, 4], &mut rng);
    fd_case(out, "autodiff", "add", &[a.clone(), b.clone()], &|t, ids| {
        t.add(ids[0], ids[1])
    })?;
    fd_case(out, "autodiff", "sub", &[a.clone(), b.clone()], &|t, ids| {
        t.sub(ids[0], ids[1])
    })?;
    fd_case(out, "autodiff", "mul", &[a.clone(), b], &|t, ids| {
        t.mul(ids[0], ids[1])
    })?;
    let bias = r(&[4], &mut rng);
    fd_case(out, "autodiff", "add-broadcast", &[a.clone(), bias], &|t, ids| {
        t.add_broadcast(ids[0], ids[1])
    })?;
    let s = Tensor::scalar(0.7);
    fd_case(out, "autodiff", "mul-scalar", &[a.clone(), s], &|t, ids| {
        t.mul_scalar(ids[0], ids[1])
    })?;
    fd_case(out, "autodiff", "scale", &[a.clone()], &|t, ids| {
        Ok(t.scale(ids[0], -1.3))
    })?;

    // relu checked away from its kink
    let mut relu_in = r(&[4, 4], &mut rng);
    for v in relu_in.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    fd_case(out, "autodiff", "relu", &[relu_in], &|t, ids| {
        Ok(t.relu(ids[0]))
    })?;

    let x = r(&[2, 3, 4], &mut rng);
    fd_case(out, "autodiff", "reshape-permute", &[x], &|t, ids| {
        let p = t.permute(ids[0], &[2, 0, 1])?;
        t.reshape(p, &[4, 6])
    })?;
    let x = r(&[3, 5], &mut rng);
    fd_case(out, "autodiff", "index-concat", &[x], &|t, ids| {
        let a = t.index_last(ids[0], 1)?;
        let b = t.index_last(ids[0], 3)?;
        t.concat_last(&[a, b])
    })?;
    let x = r(&[3, 4], &mut rng);
    fd_case(out, "autodiff", "mean", &[x], &|t, ids| {
        Ok(t.mean_all(ids[0]))
    })?;

    let logits = r(&[4, 2], &mut rng);
    let labels = crate::train::one_hot(&[0, 1, 1, 0]);
    fd_case(out, "autodiff", "cross-entropy", &[logits], &move |t, ids| {
        t.cross_entropy_mean(ids[0], &labels)
    })?;

    // end-to-end attention mechanisms on a 2x3x4x4 input
    for kind in [
        AttentionKind::LinearSeq,
        AttentionKind::ConvSeq,
        AttentionKind::LinearChanseq,
        AttentionKind::ConvChanseq,
        AttentionKind::Global,
    ] {
        let cfg = AttentionConfig {
            kind,
            d1: 2,
            d2: 3,
            d: 2,
            alpha_init: 0.5,
        };
        let mut store = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(500);
        let layer = AttentionLayer::build(&mut store, &mut prng, cfg, 3, 4, 4)?;
        let x = r(&[2, 3, 4, 4], &mut rng);
        let store_ref = store.clone();
        fd_case(
            out,
            "autodiff",
            &format!("attention-{}", kind.as_str()),
            &[x],
            &move |t, ids| {
                let bound = store_ref.bind(t);
                Ok(layer.forward(t, ids[0], &bound)?.out)
            },
        )?;
    }
    Ok(())
}

// ---- attention contracts ----------------------------------------------------

fn suite_attention(out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let x = Tensor::rand_uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    for kind in [
        AttentionKind::LinearSeq,
        AttentionKind::ConvSeq,
        AttentionKind::LinearChanseq,
        AttentionKind::ConvChanseq,
        AttentionKind::Global,
    ] {
        let cfg = AttentionConfig {
            kind,
            d1: 2,
            d2: 3,
            d: 2,
            alpha_init: 0.4,
        };
        let mut store = ParamStore::new();
        let mut prng = ChaCha8Rng::seed_from_u64(601);
        let layer = AttentionLayer::build(&mut store, &mut prng, cfg, 3, 4, 4)?;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xn = tape.constant(&x);
        let fwd = layer.forward(&mut tape, xn, &bound)?;
        let shape_ok = tape.shape(fwd.out) == x.shape();
        let scores = tape.tensor(fwd.scores.unwrap());
        let axis = layer.softmax_axis().unwrap();
        let mut worst = 0.0f32;
        for s in score_axis_sums(&scores, axis) {
            worst = worst.max((s - 1.0).abs());
        }
        let range_ok = scores.data().iter().all(|&v| v > 0.0 && v < 1.0);
        out.push(CheckResult::new(
            "attention",
            format!("contract-{}", kind.as_str()),
            shape_ok && worst < 1e-6 && range_ok,
            format!("shape preserved: {shape_ok}, max |sum-1| = {worst:.2e}"),
        ));
        if matches!(
            kind,
            AttentionKind::ConvSeq | AttentionKind::ConvChanseq | AttentionKind::Global
        ) {
            let cfg0 = AttentionConfig {
                alpha_init: 0.0,
                ..cfg
            };
            let mut store0 = ParamStore::new();
            let mut prng0 = ChaCha8Rng::seed_from_u64(601);
            let layer0 = AttentionLayer::build(&mut store0, &mut prng0, cfg0, 3, 4, 4)?;
            let mut tape0 = Tape::new();
            let bound0 = store0.bind(&mut tape0);
            let xn0 = tape0.constant(&x);
            let f0 = layer0.forward(&mut tape0, xn0, &bound0)?;
            let identity = tape0.data(f0.out) == x.data();
            out.push(CheckResult::new(
                "attention",
                format!("identity-at-zero-{}", kind.as_str()),
                identity,
                "alpha = 0 reproduces the input bitwise".into(),
            ));
        }
    }
    Ok(())
}

// ---- profiler constants -----------------------------------------------------

fn table1_spec(kind: AttentionKind, family: NetworkFamily) -> NetworkSpec {
    NetworkSpec {
        family,
        channels: 20,
        timepieces: 20,
        steps: 20,
        attention: AttentionConfig {
            kind,
            ..AttentionConfig::default()
        },
        tau: 2.0,
        v_th: 0.5,
    }
}

fn suite_profiler(out: &mut Vec<CheckResult>) {
    let cnn = build_cnn(&table1_spec(AttentionKind::None, NetworkFamily::Cnn), 0).unwrap();
    let report = profile_static(&cnn);
    let mac = report.mac_total();
    out.push(CheckResult::new(
        "profiler",
        "plain-cnn-mac-total",
        mac == 4_810_040,
        format!("MAC total {mac}, want 4810040"),
    ));
    let snn = build_snn(&table1_spec(AttentionKind::None, NetworkFamily::Snn), 0).unwrap();
    let report = profile_static(&snn);
    let ac_conv = report.ac_static_by_class(OpClass::AcConv);
    let ac_fc = report.ac_static_by_class(OpClass::AcFc);
    out.push(CheckResult::new(
        "profiler",
        "plain-snn-ac-statics",
        ac_conv == 4_000_000 && ac_fc == 10_000,
        format!("AC conv {ac_conv} (want 4000000), AC fc {ac_fc} (want 10000)"),
    ));
    let em = EnergyModel::default();
    let cnn_uj = em.energy_joules(4_810_040, 0.0) * 1e6;
    let snn_uj = em.energy_joules(1_170_040, 0.3966 * 4e6 + 0.4311 * 1e4) * 1e6;
    let cnn_ok = (cnn_uj - 23.569).abs() / 23.569 < 0.10;
    let snn_ok = (snn_uj - 7.165).abs() / 7.165 < 0.10;
    out.push(CheckResult::new(
        "profiler",
        "published-energy-within-10pct",
        cnn_ok && snn_ok,
        format!("derived {cnn_uj:.3} uJ vs 23.569, {snn_uj:.3} uJ vs 7.165"),
    ));
}

// ---- sparsity ----------------------------------------------------------------

fn suite_sparsity(out: &mut Vec<CheckResult>) {
    let kernel = LeakyKernel::new(2.0, 1.0, 0.5, 49).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let x = Tensor::rand_uniform(&[1000, 50], -1.0, 1.0, &mut rng);
    let (ni, exact, iter) = sparsity_compare(&x, &kernel, 4.0).unwrap();
    out.push(CheckResult::new(
        "sparsity",
        "closed-form-is-sparser",
        ni <= iter && ni <= exact,
        format!("rates: closed-form {ni:.4}, exact {exact:.4}, recurrent {iter:.4}"),
    ));
}

// ---- data ---------------------------------------------------------------------

fn suite_data(out: &mut Vec<CheckResult>) {
    let (m1, t1) = synth_generate(7, 3, 10, 6, 80, 0.0).unwrap();
    let (m2, t2) = synth_generate(7, 3, 10, 6, 80, 0.0).unwrap();
    out.push(CheckResult::new(
        "data",
        "synth-deterministic",
        m1 == m2 && t1 == t2,
        "same seed reproduces the dataset bitwise".into(),
    ));
    let balanced = m1.subjects.iter().all(|s| {
        let (z, o) = m1
            .trials
            .iter()
            .filter(|t| t.subject == s.id)
            .fold((0i64, 0i64), |(z, o), t| {
                if t.label == 0 {
                    (z + 1, o)
                } else {
                    (z, o + 1)
                }
            });
        (z - o).abs() <= 1
    });
    out.push(CheckResult::new(
        "data",
        "synth-balanced",
        balanced,
        "per-subject label counts differ by at most one".into(),
    ));
    let info = m1.synth.as_ref().unwrap();
    let correct = t1
        .iter()
        .filter(|t| {
            let p0 = crate::data::synth_band_power(t, info, info.cycles_class0);
            let p1 = crate::data::synth_band_power(t, info, info.cycles_class1);
            (p1 > p0) == (t.label == 1)
        })
        .count();
    out.push(CheckResult::new(
        "data",
        "synth-oracle-separable",
        correct == t1.len(),
        format!("band-power threshold classifies {correct}/{} trials", t1.len()),
    ));
}

/// Validate an on-disk dataset directory: manifest consistency, payload
/// sizes, and split-partition structure.
pub fn check_dataset_dir(dir: &std::path::Path, out: &mut Vec<CheckResult>) {
    match crate::data::Dataset::open(dir) {
        Err(e) => out.push(CheckResult::new("data", "store-opens", false, e.to_string())),
        Ok(ds) => {
            out.push(CheckResult::new(
                "data",
                "store-opens",
                true,
                format!(
                    "{} trials over {} subjects",
                    ds.manifest.trials.len(),
                    ds.manifest.subjects.len()
                ),
            ));
            let loaded = ds.load_all();
            out.push(CheckResult::new(
                "data",
                "payloads-load",
                loaded.is_ok(),
                loaded.err().map(|e| e.to_string()).unwrap_or_default(),
            ));
            if ds.manifest.subjects.len() >= 2 {
                let plans = crate::data::loso_splits(&ds.manifest).unwrap();
                let total = ds.manifest.trials.len();
                let ok = plans.iter().all(|p| {
                    p.train.len() + p.test.len() == total
                        && p.test
                            .iter()
                            .all(|&i| ds.manifest.trials[i].subject == p.held_out)
                });
                out.push(CheckResult::new(
                    "data",
                    "splits-partition",
                    ok,
                    format!("{} leave-one-subject-out plans", plans.len()),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_a_fresh_build() {
        let results = run_suites(None).unwrap();
        assert!(results.len() > 10);
        for r in &results {
            assert!(r.passed, "{}/{} failed: {}", r.suite, r.name, r.detail);
        }
    }

    #[test]
    fn suite_filter_limits_scope() {
        let results = run_suites(Some("props1")).unwrap();
        assert!(!results.is_empty());
        assert!(results.iter().all(|r| r.suite == "props1"));
        assert!(run_suites(Some("no-such-suite")).is_err());
    }

    #[test]
    fn corrupted_output_leak_matrix_fails_the_invariant_check() {
        let kernel = LeakyKernel::new(2.0, 1.0, 0.5, 9).unwrap();
        assert!(kernel_invariant_violation(&kernel).is_none());
        let mut l_out = kernel.l_out().clone();
        let t = kernel.steps();
        l_out.data_mut()[0] = 0.25; // nonzero diagonal entry
        let broken = LeakyKernel::with_matrices(
            kernel.tau,
            kernel.delta_t,
            kernel.v_th,
            kernel.t_n,
            kernel.l_in().clone(),
            l_out,
        );
        let violation = kernel_invariant_violation(&broken);
        assert!(violation.is_some());
        assert!(violation.unwrap().contains("l_out[0][0]"));
        // and the bound property reports it with a counterexample
        let x = Tensor::zeros(&[1, t]);
        let msg = prop1_violation(&x, &broken).unwrap().unwrap();
        assert!(msg.contains("kernel invariant"), "{msg}");
    }
}
