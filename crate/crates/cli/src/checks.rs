//! Gradient oracles behind `qdefect gradcheck`.

use anyhow::Result;
use qdefect::circuits::{CircuitTemplate, TemplateKind};
use qdefect::data::{wafer_mask, WaferSample};
use qdefect::encoders::EncodingSpec;
use qdefect::gradients::{finite_diff, input_angle_jacobian, param_shift_jacobian};
use qdefect::hybrid::HybridModel;
use qdefect::nn::Params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

pub const TOLERANCE: f64 = 1e-5;
const CIRCUIT_STEP: f64 = 1e-4;
const MODEL_STEP: f64 = 1e-5;
const DRAWS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// `abs` or `rel`.
    pub measure: &'static str,
    pub deviation: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.deviation <= TOLERANCE
    }
}

fn random_angles(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect()
}

fn parameter_shift_check(kind: TemplateKind, n: usize, layers: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let t = CircuitTemplate::build(kind, n, layers)?;
    let spec = EncodingSpec::angle(n, qdefect::qstate::Axis::X);
    let mut worst: f64 = 0.0;
    for _ in 0..DRAWS {
        let circuit = t.bind(random_angles(rng, t.param_count()))?;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = spec.encode(&x)?;
        let jac = param_shift_jacobian(&circuit, &input)?;
        for (q, row) in jac.iter().enumerate() {
            let fd = finite_diff(&circuit, &input, q, CIRCUIT_STEP)?;
            for (a, b) in row.iter().zip(&fd) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

fn input_check(kind: TemplateKind, n: usize, layers: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let t = CircuitTemplate::build(kind, n, layers)?;
    let spec = EncodingSpec::angle(n, qdefect::qstate::Axis::X);
    let mut worst: f64 = 0.0;
    for _ in 0..DRAWS {
        let circuit = t.bind(random_angles(rng, t.param_count()))?;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let jac = input_angle_jacobian(&circuit, &x, &spec)?;
        let eval = |x: &[f64]| -> Result<Vec<f64>> { Ok(circuit.measure_all_z(&spec.encode(x)?)?) };
        for k in 0..n {
            let mut xp = x.clone();
            xp[k] += CIRCUIT_STEP;
            let plus = eval(&xp)?;
            xp[k] -= 2.0 * CIRCUIT_STEP;
            let minus = eval(&xp)?;
            for q in 0..n {
                let fd = (plus[q] - minus[q]) / (2.0 * CIRCUIT_STEP);
                worst = worst.max((jac[q][k] - fd).abs());
            }
        }
    }
    Ok(worst)
}

fn random_sample(rng: &mut ChaCha8Rng, size: usize, label: usize) -> Result<WaferSample> {
    let grid = wafer_mask(size, size).iter().map(|&on| if on { rng.gen_range(1..=2) } else { 0 }).collect();
    Ok(WaferSample::new(size, size, grid, label)?)
}

/// Relative error of the analytic model gradient against central
/// differences. With a non-angle encoding the classical stage is frozen
/// and only the circuit and head parameters are compared.
fn model_check(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<(f64, &'static str)> {
    let mut model = HybridModel::new(cfg.model_for(6, 6, 3))?;
    let values: Vec<f64> = (0..model.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    model.load(&values)?;
    let batch = vec![random_sample(rng, 6, 0)?, random_sample(rng, 6, 2)?];
    let analytic = model.loss_and_grads(&batch)?.1.flatten();
    let from = if model.classical_trainable() { 0 } else { model.classical_param_count() };
    let mut probe = model.clone();
    let mut num = Vec::with_capacity(values.len() - from);
    for j in from..values.len() {
        let mut p = values.clone();
        p[j] += MODEL_STEP;
        probe.load(&p)?;
        let plus = probe.loss(&batch)?;
        p[j] -= 2.0 * MODEL_STEP;
        probe.load(&p)?;
        num.push((plus - probe.loss(&batch)?) / (2.0 * MODEL_STEP));
    }
    let a = &analytic[from..];
    let diff: f64 = a.iter().zip(&num).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(num.iter().map(|x| x * x).sum::<f64>().sqrt());
    let scope = if from == 0 { "all parameters" } else { "circuit + head" };
    Ok((if scale == 0.0 { 0.0 } else { diff / scale }, scope))
}

pub fn run(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let n = cfg.model.n_qubits;
    let layers = cfg.model.n_layers;
    let mut out = Vec::new();
    for kind in TemplateKind::BUILTIN {
        if n < 2 && kind != TemplateKind::Basic {
            continue;
        }
        out.push(CheckResult {
            name: format!("parameter-shift {kind} n={n} layers={layers}"),
            measure: "abs",
            deviation: parameter_shift_check(kind, n, layers, &mut rng)?,
        });
    }
    let kind = cfg.model.template;
    out.push(CheckResult {
        name: format!("input-angle {kind} n={n} layers={layers}"),
        measure: "abs",
        deviation: input_check(kind, n, layers, &mut rng)?,
    });
    let (deviation, scope) = model_check(cfg, &mut rng)?;
    out.push(CheckResult {
        name: format!("end-to-end {} model, 6x6 input ({scope})", cfg.model.variant.name()),
        measure: "rel",
        deviation,
    });
    Ok(out)
}
