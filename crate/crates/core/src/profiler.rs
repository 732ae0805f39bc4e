//! Static FLOPs accounting, dynamic spike-rate measurement, and the
//! multiply-accumulate vs accumulate-only energy model.
//!
//! Counting convention: one MAC is one multiply-accumulate, so a
//! convolution counts k0*k1*h*w*c_out*c_in (output map h x w), a linear
//! layer i*o, and a matrix product m1*n*m2 per application. Work repeated
//! per position, head, or channel is multiplied out. Bias additions,
//! normalization, activations, pooling, softmax, thresholding, and
//! elementwise mixing are not MAC/AC work; they are itemized in an
//! auxiliary uncounted-ops column. Spiking layers add a separate
//! neuron-overhead item: two (1 x T)(T x T) products per neuron, with the
//! subtraction and the two comparisons left uncounted. All counts are per
//! input sample (the batch extent is excluded).

use crate::attention::AttentionKind;
use crate::error::{Result, SnnError};
use crate::model::{Layer, Model};
use crate::tensor::{BnMode, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// FLOPs of a convolution: kernel extents, output map extents, channels.
pub fn flops_conv(k0: u64, k1: u64, h: u64, w: u64, c_out: u64, c_in: u64) -> u64 {
    k0 * k1 * h * w * c_out * c_in
}

/// FLOPs of a fully connected layer.
pub fn flops_fc(i: u64, o: u64) -> u64 {
    i * o
}

/// FLOPs of an [m1, n] x [n, m2] matrix product.
pub fn flops_mm(m1: u64, n: u64, m2: u64) -> u64 {
    m1 * n * m2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpClass {
    MacConv,
    MacFc,
    MacMatmul,
    AcConv,
    AcFc,
    NeuronOverhead,
}

impl OpClass {
    pub fn is_ac(&self) -> bool {
        matches!(self, OpClass::AcConv | OpClass::AcFc)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OpClass::MacConv => "mac-conv",
            OpClass::MacFc => "mac-fc",
            OpClass::MacMatmul => "mac-matmul",
            OpClass::AcConv => "ac-conv",
            OpClass::AcFc => "ac-fc",
            OpClass::NeuronOverhead => "neuron-overhead",
        }
    }
}

/// Cost record for one layer (or one itemized attention-internal op).
/// Rows with `class: None` carry only uncounted work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    pub class: Option<OpClass>,
    pub static_ops: u64,
    pub spike_rate: Option<f64>,
    pub effective_ops: Option<f64>,
    pub uncounted_ops: u64,
}

/// Energy per operation: 4.6 pJ per MAC, 0.9 pJ per effective AC by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub mac_joules: f64,
    pub ac_joules: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            mac_joules: 4.6e-12,
            ac_joules: 0.9e-12,
        }
    }
}

impl EnergyModel {
    pub fn new(mac_joules: f64, ac_joules: f64) -> Result<Self> {
        if mac_joules <= 0.0 || ac_joules <= 0.0 {
            return Err(SnnError::Config("energy per op must be positive".into()));
        }
        Ok(EnergyModel {
            mac_joules,
            ac_joules,
        })
    }

    /// Total energy of `mac` multiply-accumulates plus `ac_effective`
    /// rate-scaled accumulate-only operations.
    pub fn energy_joules(&self, mac: u64, ac_effective: f64) -> f64 {
        self.mac_joules * mac as f64 + self.ac_joules * ac_effective
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub energy_model: EnergyModel,
}

impl CostReport {
    /// Sum of all multiply-accumulate classes, neuron overhead included.
    pub fn mac_total(&self) -> u64 {
        self.layers
            .iter()
            .filter(|l| matches!(l.class, Some(c) if !c.is_ac()))
            .map(|l| l.static_ops)
            .sum()
    }

    pub fn ac_static_total(&self) -> u64 {
        self.layers
            .iter()
            .filter(|l| matches!(l.class, Some(c) if c.is_ac()))
            .map(|l| l.static_ops)
            .sum()
    }

    pub fn ac_static_by_class(&self, class: OpClass) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.class == Some(class))
            .map(|l| l.static_ops)
            .sum()
    }

    /// Rate-scaled accumulate-only total; `None` until every AC layer has a
    /// measured rate.
    pub fn ac_effective_total(&self) -> Option<f64> {
        let mut total = 0.0;
        for l in &self.layers {
            if matches!(l.class, Some(c) if c.is_ac()) {
                total += l.effective_ops?;
            }
        }
        Some(total)
    }

    pub fn energy_joules(&self) -> Option<f64> {
        Some(
            self.energy_model
                .energy_joules(self.mac_total(), self.ac_effective_total()?),
        )
    }

    pub fn uncounted_total(&self) -> u64 {
        self.layers.iter().map(|l| l.uncounted_ops).sum()
    }
}

/// Static cost walk over the layer list; spike rates stay unset.
pub fn profile_static(model: &Model) -> CostReport {
    let spec = &model.spec;
    let mut layers = Vec::new();
    let c = spec.channels as u64;
    let (mut s, mut t) = (spec.timepieces as u64, spec.steps as u64);
    let push = |layers: &mut Vec<LayerCost>,
                name: String,
                class: Option<OpClass>,
                static_ops: u64,
                uncounted: u64| {
        layers.push(LayerCost {
            layer: name,
            class,
            static_ops,
            spike_rate: None,
            effective_ops: None,
            uncounted_ops: uncounted,
        });
    };
    for layer in &model.layers {
        match layer {
            Layer::CloneResidual => {}
            Layer::Conv2d {
                name, kh, kw, ac, ..
            } => {
                let class = if *ac { OpClass::AcConv } else { OpClass::MacConv };
                let ops = flops_conv(*kh as u64, *kw as u64, s, t, c, c);
                // bias add per output element
                push(&mut layers, name.clone(), Some(class), ops, c * s * t);
            }
            Layer::BatchNorm { name, .. } => {
                push(&mut layers, name.clone(), None, 0, 4 * c * s * t);
            }
            Layer::Relu => {
                push(&mut layers, "relu".into(), None, 0, c * s * t);
            }
            Layer::Spiking { name, .. } => {
                // two (1xT)(TxT) products per neuron, C*S neurons
                let neurons = c * s;
                let ops = neurons * 2 * flops_mm(1, t, t);
                // membrane normalization + subtraction + two comparisons
                let uncounted = 4 * c * s * t + 3 * c * s * t;
                push(
                    &mut layers,
                    format!("{name}.neurons"),
                    Some(OpClass::NeuronOverhead),
                    ops,
                    uncounted,
                );
            }
            Layer::MaxPool | Layer::AvgPool => {
                s /= 2;
                t /= 2;
                push(&mut layers, "pool".into(), None, 0, 4 * c * s * t);
            }
            Layer::Attention(attn) => {
                profile_attention(&mut layers, attn.cfg.kind, attn.cfg.d1 as u64, attn.cfg.d2 as u64, attn.cfg.d as u64, c, s, t);
            }
            Layer::AddResidual { .. } => {
                // residual pool + elementwise add
                push(&mut layers, "residual".into(), None, 0, 5 * c * s * t);
            }
            Layer::Flatten => {}
            Layer::Linear { name, w, ac, .. } => {
                let shape = model.store.get(*w).value.shape();
                let (i, o) = (shape[0] as u64, shape[1] as u64);
                let class = if *ac { OpClass::AcFc } else { OpClass::MacFc };
                push(&mut layers, name.clone(), Some(class), flops_fc(i, o), o);
            }
        }
    }
    CostReport {
        layers,
        energy_model: EnergyModel::default(),
    }
}

#[allow(clippy::too_many_arguments)]
fn profile_attention(
    layers: &mut Vec<LayerCost>,
    kind: AttentionKind,
    d1: u64,
    d2: u64,
    d: u64,
    c: u64,
    s: u64,
    t: u64,
) {
    let push = |layers: &mut Vec<LayerCost>, name: &str, class: OpClass, ops: u64, unc: u64| {
        layers.push(LayerCost {
            layer: format!("attn.{name}"),
            class: Some(class),
            static_ops: ops,
            spike_rate: None,
            effective_ops: None,
            uncounted_ops: unc,
        });
    };
    let softmax_cost = |rows: u64, len: u64| 3 * rows * len;
    match kind {
        AttentionKind::None => {}
        AttentionKind::LinearSeq => {
            let f = c * t;
            let p = d1 * d2;
            // q, k, v projections applied per timepiece; position add uncounted
            push(layers, "proj", OpClass::MacFc, 3 * s * flops_fc(f, p), s * f + 3 * s * p);
            push(layers, "scores", OpClass::MacMatmul, d1 * flops_mm(s, d2, s), softmax_cost(d1 * s, s) + d1 * s * s);
            push(layers, "mix", OpClass::MacMatmul, d1 * flops_mm(s, s, d2), 0);
            push(layers, "out-proj", OpClass::MacFc, s * flops_fc(p, f), s * f);
        }
        AttentionKind::LinearChanseq => {
            let p = d1 * d2;
            push(layers, "proj", OpClass::MacFc, 3 * c * s * flops_fc(t, p), c * s * t + 3 * c * s * p);
            push(layers, "scores", OpClass::MacMatmul, c * d1 * flops_mm(s, d2, s), softmax_cost(c * d1 * s, s) + c * d1 * s * s);
            push(layers, "mix", OpClass::MacMatmul, c * d1 * flops_mm(s, s, d2), 0);
            push(layers, "out-proj", OpClass::MacFc, c * s * flops_fc(p, t), c * s * t);
        }
        AttentionKind::ConvSeq => {
            push(layers, "proj", OpClass::MacConv, 2 * flops_conv(1, 1, s, t, d * c, c), 2 * d * c * s * t);
            push(layers, "scores", OpClass::MacMatmul, flops_mm(s, d * c * t, s), softmax_cost(s, s));
            push(layers, "mix", OpClass::MacMatmul, flops_mm(s, s, c * t), 2 * c * s * t);
        }
        AttentionKind::ConvChanseq => {
            push(layers, "proj", OpClass::MacConv, 2 * flops_conv(1, 1, s, t, d * c, c), 2 * d * c * s * t);
            push(layers, "scores", OpClass::MacMatmul, c * flops_mm(s, d * t, s), softmax_cost(c * s, s));
            push(layers, "mix", OpClass::MacMatmul, c * flops_mm(s, s, t), 2 * c * s * t);
        }
        AttentionKind::Global => {
            push(layers, "proj", OpClass::MacConv, 2 * flops_conv(1, 1, s, t, d * c, c), 2 * d * c * s * t);
            push(layers, "scores", OpClass::MacMatmul, c * flops_mm(s, d * t, t), softmax_cost(c * t, s));
            // elementwise refinement and mixing are not matrix work
            push(layers, "mix", OpClass::MacMatmul, 0, 3 * c * s * t);
        }
    }
}

/// Run the model over sample batches and fill measured spike rates on the
/// accumulate-only rows, plus the implied effective operation counts.
pub fn measure_spike_rates(model: &mut Model, batches: &[Tensor]) -> Result<CostReport> {
    if batches.is_empty() {
        return Err(SnnError::Contract(
            "spike-rate measurement needs at least one batch".into(),
        ));
    }
    let mut report = profile_static(model);
    let mut sums: std::collections::HashMap<String, (f64, u64)> = Default::default();
    for batch in batches {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, batch, BnMode::Infer)?;
        for (name, node) in &out.ac_inputs {
            let data = tape.data(*node);
            let entry = sums.entry(name.clone()).or_insert((0.0, 0));
            entry.0 += data.iter().map(|&v| v as f64).sum::<f64>();
            entry.1 += data.len() as u64;
        }
    }
    for row in &mut report.layers {
        if matches!(row.class, Some(c) if c.is_ac()) {
            let (ones, count) = sums.get(&row.layer).copied().ok_or_else(|| {
                SnnError::Contract(format!("no measured rate for layer {}", row.layer))
            })?;
            let rate = ones / count as f64;
            row.spike_rate = Some(rate);
            row.effective_ops = Some(row.static_ops as f64 * rate);
        }
    }
    Ok(report)
}

/// Output format of [`render_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    JsonLines,
}

fn micro_joules(j: f64) -> String {
    format!("{:.3}", j * 1e6)
}

/// Render with stable column order; counts stay exact integers, energy is
/// micro-joules with three decimals.
pub fn render_report(report: &CostReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<18} {:<16} {:>12} {:>8} {:>14} {:>12}\n",
                "layer", "class", "static", "rate", "effective", "uncounted"
            ));
            for l in &report.layers {
                out.push_str(&format!(
                    "{:<18} {:<16} {:>12} {:>8} {:>14} {:>12}\n",
                    l.layer,
                    l.class.map(|c| c.as_str()).unwrap_or("-"),
                    l.static_ops,
                    l.spike_rate
                        .map(|r| format!("{r:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    l.effective_ops
                        .map(|e| format!("{e:.1}"))
                        .unwrap_or_else(|| "-".into()),
                    l.uncounted_ops,
                ));
            }
            out.push_str(&format!(
                "total MAC {}  AC static {}  AC effective {}  uncounted {}\n",
                report.mac_total(),
                report.ac_static_total(),
                report
                    .ac_effective_total()
                    .map(|e| format!("{e:.1}"))
                    .unwrap_or_else(|| "-".into()),
                report.uncounted_total(),
            ));
            out.push_str(&format!(
                "energy {} uJ\n",
                report
                    .energy_joules()
                    .map(micro_joules)
                    .unwrap_or_else(|| "-".into())
            ));
            out
        }
        ReportFormat::JsonLines => {
            let mut out = String::new();
            for l in &report.layers {
                out.push_str(&serde_json::to_string(l).unwrap());
                out.push('\n');
            }
            let totals = serde_json::json!({
                "totals": {
                    "mac": report.mac_total(),
                    "ac_static": report.ac_static_total(),
                    "ac_effective": report.ac_effective_total(),
                    "energy_joules": report.energy_joules(),
                },
                "energy_model": report.energy_model,
            });
            out.push_str(&totals.to_string());
            out.push('\n');
            out
        }
    }
}

/// Parse the json-lines form back into a report.
pub fn parse_report(text: &str) -> Result<CostReport> {
    let mut layers = Vec::new();
    let mut energy_model = EnergyModel::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)?;
        if v.get("totals").is_some() {
            energy_model = serde_json::from_value(v["energy_model"].clone())?;
        } else {
            layers.push(serde_json::from_value(v)?);
        }
    }
    Ok(CostReport {
        layers,
        energy_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;
    use crate::model::{build_cnn, build_snn, NetworkFamily, NetworkSpec};

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

    #[test]
    fn formula_unit_cases() {
        assert_eq!(flops_conv(1, 1, 1, 1, 1, 1), 1);
        assert_eq!(flops_fc(1, 1), 1);
        assert_eq!(flops_mm(1, 1, 1), 1);
        assert_eq!(flops_mm(2, 3, 4), 24);
        assert_eq!(flops_fc(500, 20), 10_000);
        assert_eq!(flops_fc(20, 2), 40);
        assert_eq!(flops_conv(1, 5, 20, 20, 20, 20), 800_000);
        assert_eq!(flops_conv(10, 10, 10, 10, 20, 20), 4_000_000);
        // scores product of the conv-seq mechanism at the insertion shape
        assert_eq!(flops_mm(10, 8 * 20 * 10, 10), 160_000);
    }

    #[test]
    fn vanilla_cnn_reproduces_published_mac_total() {
        let model = build_cnn(&table1_spec(AttentionKind::None, NetworkFamily::Cnn), 0).unwrap();
        let report = profile_static(&model);
        assert_eq!(report.mac_total(), 4_810_040);
        assert_eq!(report.ac_static_total(), 0);
    }

    #[test]
    fn vanilla_snn_reproduces_published_ac_constants() {
        let model = build_snn(&table1_spec(AttentionKind::None, NetworkFamily::Snn), 0).unwrap();
        let report = profile_static(&model);
        assert_eq!(report.ac_static_by_class(OpClass::AcConv), 4_000_000);
        assert_eq!(report.ac_static_by_class(OpClass::AcFc), 10_000);
        // non-neuron MAC part: encoder conv + final linear
        let plain_mac: u64 = report
            .layers
            .iter()
            .filter(|l| matches!(l.class, Some(OpClass::MacConv | OpClass::MacFc)))
            .map(|l| l.static_ops)
            .sum();
        assert_eq!(plain_mac, 800_040);
        // documented neuron convention: 2*T^2 per neuron
        let overhead: u64 = report
            .layers
            .iter()
            .filter(|l| l.class == Some(OpClass::NeuronOverhead))
            .map(|l| l.static_ops)
            .sum();
        assert_eq!(overhead, 2 * 400 * 400 + 2 * 100 * 200);
    }

    #[test]
    fn static_profile_ignores_seed() {
        let spec = table1_spec(AttentionKind::Global, NetworkFamily::Snn);
        let a = profile_static(&build_snn(&spec, 0).unwrap());
        let b = profile_static(&build_snn(&spec, 12345).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn attention_mac_is_monotone_in_expansion_factor() {
        for kind in [
            AttentionKind::ConvSeq,
            AttentionKind::ConvChanseq,
            AttentionKind::Global,
        ] {
            let mut prev = 0;
            for d in [2usize, 4, 8, 16] {
                let mut spec = table1_spec(kind, NetworkFamily::Snn);
                spec.attention.d = d;
                let report = profile_static(&build_snn(&spec, 0).unwrap());
                let mac = report.mac_total();
                assert!(mac >= prev, "{kind:?} d={d}");
                prev = mac;
            }
        }
    }

    #[test]
    fn energy_is_linear_in_rates() {
        let mut model = build_snn(&table1_spec(AttentionKind::None, NetworkFamily::Snn), 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand_chacha::rand_core::SeedableRng;
        let batch = Tensor::rand_uniform(&[2, 20, 20, 20], -1.0, 1.0, &mut rng);
        let report = measure_spike_rates(&mut model, &[batch]).unwrap();
        let base_ac = report.ac_effective_total().unwrap();
        let mut doubled = report.clone();
        for row in &mut doubled.layers {
            if let Some(r) = row.spike_rate {
                row.spike_rate = Some(r * 2.0);
                row.effective_ops = Some(row.static_ops as f64 * r * 2.0);
            }
        }
        let em = report.energy_model;
        let e1 = em.energy_joules(report.mac_total(), base_ac);
        let e2 = em.energy_joules(report.mac_total(), doubled.ac_effective_total().unwrap());
        let ac_term1 = e1 - em.mac_joules * report.mac_total() as f64;
        let ac_term2 = e2 - em.mac_joules * report.mac_total() as f64;
        assert!((ac_term2 - 2.0 * ac_term1).abs() < 1e-18);
        // rates are valid fractions
        for row in &report.layers {
            if let Some(r) = row.spike_rate {
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn measure_requires_data() {
        let mut model = build_snn(&table1_spec(AttentionKind::None, NetworkFamily::Snn), 0).unwrap();
        assert!(matches!(
            measure_spike_rates(&mut model, &[]),
            Err(SnnError::Contract(_))
        ));
    }

    #[test]
    fn microjoule_formatting_rounds_to_three_decimals() {
        assert_eq!(micro_joules(6.8138e-6), "6.814");
        assert_eq!(micro_joules(22.1261e-6), "22.126");
    }

    #[test]
    fn json_lines_round_trip() {
        let mut model = build_snn(&table1_spec(AttentionKind::Global, NetworkFamily::Snn), 0).unwrap();
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let batch = Tensor::rand_uniform(&[2, 20, 20, 20], -1.0, 1.0, &mut rng);
        let report = measure_spike_rates(&mut model, &[batch]).unwrap();
        let text = render_report(&report, ReportFormat::JsonLines);
        let parsed = parse_report(&text).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn published_energy_reconciliation() {
        // arithmetic of the energy model against published constants:
        // conventional total 4,810,040 MAC and spiking total 1,170,040 MAC
        // with AC rates (0.3966, 0.4311) on (4,000,000, 10,000)
        let em = EnergyModel::default();
        let cnn = em.energy_joules(4_810_040, 0.0);
        assert_eq!(micro_joules(cnn), "22.126");
        let ac_eff = 0.3966 * 4_000_000.0 + 0.4311 * 10_000.0;
        let snn = em.energy_joules(1_170_040, ac_eff);
        assert_eq!(micro_joules(snn), "6.814");
        // both land within the 10% reconciliation band of the published
        // 23.569 and 7.165 micro-joules
        assert!((cnn * 1e6 - 23.569).abs() / 23.569 < 0.10);
        assert!((snn * 1e6 - 7.165).abs() / 7.165 < 0.10);
    }
}
