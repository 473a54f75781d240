//! Acceptance criteria. Runs sequentially (so timings are not distorted by
//! other tests), prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qdefect::analysis::{entangling_capability, expressibility};
use qdefect::circuits::{CircuitTemplate, TemplateKind};
use qdefect::data::{generate_dataset, split, wafer_mask, Dataset, Pattern, WaferSample};
use qdefect::encoders::{basis_encode, EncodingSpec};
use qdefect::gradients::{finite_diff, param_shift_jacobian};
use qdefect::hybrid::{train, ModelConfig, HybridModel, TrainConfig, Variant};
use qdefect::nn::{Params, SelfProliferationConfig};
use qdefect::qstate::{Axis, Gate, Statevector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_gate(rng: &mut ChaCha8Rng, n: usize) -> Gate {
    let t = rng.gen_range(0..n);
    let theta = rng.gen_range(-TAU..TAU);
    let c = if n > 1 { (t + rng.gen_range(1..n)) % n } else { t };
    match rng.gen_range(0..if n > 1 { 9 } else { 5 }) {
        0 => Gate::rx(t, theta),
        1 => Gate::ry(t, theta),
        2 => Gate::rz(t, theta),
        3 => Gate::h(t),
        4 => Gate::x(t),
        5 => Gate::cnot(c, t),
        6 => Gate::crx(c, t, theta),
        7 => Gate::cry(c, t, theta),
        _ => Gate::crz(c, t, theta),
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Statevector {
    let amps: Vec<Complex64> =
        (0..1usize << n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    Statevector::from_amplitudes(n, amps.into_iter().map(|a| a / norm).collect()).unwrap()
}

fn simulator_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut norm_err, mut trip_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=6);
        let gates: Vec<Gate> = (0..rng.gen_range(1..40)).map(|_| random_gate(&mut rng, n)).collect();
        let input = random_state(&mut rng, n);
        let mut s = input.clone();
        for g in &gates {
            s.apply(g).unwrap();
            norm_err = norm_err.max((s.norm_sqr() - 1.0).abs());
        }
        for g in gates.iter().rev() {
            s.apply(&g.inverse()).unwrap();
        }
        for (a, b) in s.amplitudes().iter().zip(input.amplitudes()) {
            trip_err = trip_err.max((a - b).norm());
        }
    }
    let t = start.elapsed();
    outcome(
        norm_err <= 1e-12 && trip_err <= 1e-12 && t < Duration::from_secs(10),
        format!("max norm drift {norm_err:.1e}, max round-trip error {trip_err:.1e}, {:.2} s", t.as_secs_f64()),
    )
}

fn encoder_correctness() -> Outcome {
    let exact = |bits: &str, index: usize| {
        let s = basis_encode(bits).unwrap();
        s.amplitudes().iter().enumerate().all(|(i, a)| *a == Complex64::new(if i == index { 1.0 } else { 0.0 }, 0.0))
    };
    let basis_ok = exact("01", 0b01) && exact("11", 0b11);
    let spec = EncodingSpec::angle(1, Axis::X);
    let mut worst = 0.0f64;
    for k in 0..=100 {
        let x = -1.0 + 2.0 * k as f64 / 100.0;
        let z = spec.encode(&[x]).unwrap().expectation_z(0).unwrap();
        worst = worst.max((z - ((x + 1.0) * PI / 2.0).cos()).abs());
    }
    outcome(basis_ok && worst <= 1e-12, format!("basis examples exact: {basis_ok}, angle ⟨σz⟩ max error {worst:.1e}"))
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = EncodingSpec::angle(4, Axis::X);
    let mut worst = 0.0f64;
    for kind in TemplateKind::BUILTIN {
        let t = CircuitTemplate::build(kind, 4, 2).unwrap();
        for _ in 0..20 {
            let params: Vec<f64> = (0..t.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = spec.encode(&x).unwrap();
            let c = t.bind(params).unwrap();
            let jac = param_shift_jacobian(&c, &input).unwrap();
            for (q, row) in jac.iter().enumerate() {
                for (a, b) in row.iter().zip(finite_diff(&c, &input, q, 1e-4).unwrap()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-6 && t < Duration::from_secs(120),
        format!("max |shift − FD| {worst:.1e} over 5 templates × 20 draws, {:.2} s", t.as_secs_f64()),
    )
}

fn end_to_end_gradient() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        stem_channels: 2,
        proliferation: SelfProliferationConfig { s: 2, t: 2, cheap_kernel: 3 },
        attention_inner: 2,
        n_qubits: 2,
        template: TemplateKind::C16,
        n_layers: 1,
        ..ModelConfig::new(6, 6, 3)
    };
    let mut model = HybridModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<f64> = (0..model.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
    model.load(&values).unwrap();
    let batch: Vec<WaferSample> = (0..3)
        .map(|label| {
            let grid = wafer_mask(6, 6).iter().map(|&on| if on { rng.gen_range(1..=2) } else { 0 }).collect();
            WaferSample::new(6, 6, grid, label).unwrap()
        })
        .collect();
    let analytic = model.loss_and_grads(&batch).unwrap().1.flatten();
    let h = 1e-5;
    let mut probe = model.clone();
    let numeric: Vec<f64> = (0..values.len())
        .map(|j| {
            let mut p = values.clone();
            p[j] += h;
            probe.load(&p).unwrap();
            let plus = probe.loss(&batch).unwrap();
            p[j] -= 2.0 * h;
            probe.load(&p).unwrap();
            (plus - probe.loss(&batch).unwrap()) / (2.0 * h)
        })
        .collect();
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let rel = l2(&mut analytic.iter().zip(&numeric).map(|(a, b)| a - b))
        / l2(&mut analytic.iter().copied()).max(l2(&mut numeric.iter().copied()));
    let t = start.elapsed();
    outcome(
        rel <= 1e-5 && t < Duration::from_secs(60),
        format!("relative error {rel:.1e} over {} parameters, {:.2} s", values.len(), t.as_secs_f64()),
    )
}

fn parameter_counts() -> Outcome {
    let mut bad = Vec::new();
    for n in 2..=8 {
        for layers in 1..=3 {
            let expected = [
                (TemplateKind::Basic, n * layers),
                (TemplateKind::C5, layers * (4 * n + n * (n - 1))),
                (TemplateKind::C6, layers * (4 * n + n * (n - 1))),
                (TemplateKind::C16, layers * (2 * n + (n - 1))),
                (TemplateKind::C17, layers * (2 * n + (n - 1))),
            ];
            for (kind, want) in expected {
                let got = CircuitTemplate::build(kind, n, layers).unwrap().param_count();
                if got != want {
                    bad.push(format!("{kind} n={n} L={layers}: {got} ≠ {want}"));
                }
            }
        }
    }
    let four_by_three = CircuitTemplate::build(TemplateKind::Basic, 4, 3).unwrap().param_count();
    outcome(
        bad.is_empty() && four_by_three == 12,
        if bad.is_empty() { "all formulas hold for n = 2..8".into() } else { bad.join("; ") },
    )
}

fn crz_permutation_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for kind in [TemplateKind::C5, TemplateKind::C16] {
        for n in 2..=6 {
            let t = CircuitTemplate::build(kind, n, 2).unwrap();
            for _ in 0..10 {
                let params: Vec<f64> = (0..t.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect();
                let mut order: Vec<usize> = (0..t.slots().len()).collect();
                for block in t.entangling_blocks() {
                    let sub = &mut order[block.clone()];
                    for i in (1..sub.len()).rev() {
                        sub.swap(i, rng.gen_range(0..=i));
                    }
                }
                let p = t.permuted(&order).unwrap();
                let input = random_state(&mut rng, n);
                let a = t.bind(params.clone()).unwrap().run(&input).unwrap();
                let b = p.bind(params).unwrap().run(&input).unwrap();
                for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
                    worst = worst.max((x - y).norm());
                }
            }
        }
    }
    worst
}

fn template_ordering() -> Outcome {
    let build = |k| CircuitTemplate::build(k, 4, 4).unwrap();
    let (c5, c16, basic) = (build(TemplateKind::C5), build(TemplateKind::C16), build(TemplateKind::Basic));
    let (mut kl_wins, mut q_wins) = (0, 0);
    let (mut kls, mut qs) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let kl5 = expressibility(&c5, 5000, 75, seed).unwrap().kl_divergence;
        let klb = expressibility(&basic, 5000, 75, seed).unwrap().kl_divergence;
        let q5 = entangling_capability(&c5, 5000, seed).unwrap().mean_q;
        let q16 = entangling_capability(&c16, 5000, seed).unwrap().mean_q;
        kl_wins += usize::from(kl5 < klb);
        q_wins += usize::from(q5 >= q16);
        kls.push(format!("{kl5:.4}/{klb:.4}"));
        qs.push(format!("{q5:.3}/{q16:.3}"));
    }
    let perm = crz_permutation_error();
    outcome(
        kl_wins >= 4 && q_wins >= 4 && perm <= 1e-12,
        format!(
            "KL(c5) < KL(basic) in {kl_wins}/5 [{}]; Q(c5) ≥ Q(c16) in {q_wins}/5 [{}]; CRz permutation error {perm:.1e}",
            kls.join(" "),
            qs.join(" ")
        ),
    )
}

fn task() -> (Dataset, Dataset) {
    let mix = [Pattern::Center, Pattern::Edge, Pattern::Ring, Pattern::Scratch];
    let d = generate_dataset(&mix, 500, 26, 0.05, 0).unwrap();
    split(&d, 0.2, 0).unwrap()
}

fn recipe(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 0.01, seed, ..TrainConfig::default() }
}

fn run(variant: Variant, seed: u64, train_set: &Dataset, test_set: &Dataset) -> (f64, Duration) {
    let start = Instant::now();
    let cfg = ModelConfig { variant, seed, ..ModelConfig::new(26, 26, 4) };
    let mut model = HybridModel::new(cfg).unwrap();
    let record = train(&mut model, train_set, Some(test_set), &recipe(seed)).unwrap();
    (record.epochs.last().unwrap().test_acc.unwrap(), start.elapsed())
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> ExitCode {
    let (train_set, test_set) = task();
    let mut hybrid_acc = Vec::new();

    let mut failed = 0;
    let mut total = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        total += 1;
        failed += usize::from(!o.pass);
    };

    report("simulator exactness", simulator_exactness());
    report("encoder correctness", encoder_correctness());
    report("gradient fidelity", gradient_fidelity());
    report("end-to-end differentiability", end_to_end_gradient());
    report("circuit-zoo parameter counts", parameter_counts());
    report("template ordering", template_ordering());

    let (acc, t) = run(Variant::Hybrid, 0, &train_set, &test_set);
    hybrid_acc.push(acc);
    report(
        "desk-scale learning",
        outcome(
            train_set.len() == 400 && test_set.len() == 100 && acc >= 0.9 && t < Duration::from_secs(600),
            format!("test accuracy {acc:.2} after 30 epochs on 400/100 samples, {:.0} s", t.as_secs_f64()),
        ),
    );

    let mut classical_acc = Vec::new();
    for seed in 0..5 {
        if seed > 0 {
            hybrid_acc.push(run(Variant::Hybrid, seed, &train_set, &test_set).0);
        }
        classical_acc.push(run(Variant::Classical, seed, &train_set, &test_set).0);
    }
    let (mh, mc) = (median(&hybrid_acc), median(&classical_acc));
    report(
        "hybrid vs classical",
        outcome(mh >= mc, format!("median test accuracy hybrid {mh:.2} {hybrid_acc:?} vs classical {mc:.2} {classical_acc:?}")),
    );

    println!("{} of {total} criteria passed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
