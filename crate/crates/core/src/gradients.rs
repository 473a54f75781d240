//! Parameter-shift gradients of `⟨σ_z⟩` outputs.
//!
//! Single-qubit rotations use the two-term rule
//! `∂E/∂θ = [E(θ + π/2) − E(θ − π/2)] / 2`.
//!
//! A controlled rotation `CR(θ) = |0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ R(θ)` has generator
//! `|1⟩⟨1| ⊗ σ/2 = ½(I ⊗ σ/2) − ½(Z ⊗ σ/2)`. The two terms commute, so
//! `CR(θ) = R_t(θ/2) · exp(+iθ/4 Z ⊗ σ)`, and each factor has a generator
//! with eigenvalues `±½`. Differentiating each factor with its own two-term
//! rule gives four evaluations:
//!
//! ```text
//! ∂E/∂θ = ¼[E(α+π/2) − E(α−π/2)] − ¼[E(β+π/2) − E(β−π/2)],  α = θ/2, β = −θ/2
//! ```

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;

use crate::circuits::{BoundCircuit, SlotTweak, TweakMode};
use crate::encoders::{encoding_angles, rotation_product_state, EncodingSpec, Scheme};
use crate::error::{Error, Result};
use crate::qstate::Statevector;

/// Upper bound on the finite-difference step.
pub const MAX_FD_STEP: f64 = 1e-2;

/// Jacobians of every measured `⟨σ_z⟩` (rows) with respect to the circuit
/// parameters and the encoded input features.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumGradient {
    /// `n_outputs × param_count`.
    pub params: Vec<Vec<f64>>,
    /// `n_outputs × n_qubits`, derivatives with respect to the pre-map
    /// features `x` (the angle map slope is already applied).
    pub inputs: Vec<Vec<f64>>,
}

fn eval_tweaked(circuit: &BoundCircuit<'_>, input: &Statevector, tweak: SlotTweak) -> Vec<f64> {
    let mut state = input.clone();
    circuit.template().execute(circuit.params(), &mut state, Some(tweak));
    state.expectation_z_all()
}

/// Full Jacobian `∂⟨σ_z(q)⟩/∂θ_j`, one row per qubit.
pub fn param_shift_jacobian(circuit: &BoundCircuit<'_>, input: &Statevector) -> Result<Vec<Vec<f64>>> {
    circuit.check(input)?;
    let template = circuit.template();
    let n_out = template.n_qubits();
    for s in template.slots() {
        if s.param.is_some() && !s.kind.is_parametrized() {
            return Err(Error::Unsupported(format!("parameter on non-rotation gate {}", s.kind.name())));
        }
    }
    let parametrized: Vec<usize> =
        template.slots().iter().enumerate().filter(|(_, s)| s.param.is_some()).map(|(i, _)| i).collect();

    let contributions: Vec<Vec<f64>> = parametrized
        .par_iter()
        .map(|&slot| {
            let eval = |mode| eval_tweaked(circuit, input, SlotTweak { slot, mode });
            if template.slots()[slot].control.is_none() {
                let plus = eval(TweakMode::Shift(FRAC_PI_2));
                let minus = eval(TweakMode::Shift(-FRAC_PI_2));
                plus.iter().zip(&minus).map(|(p, m)| 0.5 * (p - m)).collect()
            } else {
                let tp = eval(TweakMode::SplitTarget(FRAC_PI_2));
                let tm = eval(TweakMode::SplitTarget(-FRAC_PI_2));
                let sp = eval(TweakMode::SplitSign(FRAC_PI_2));
                let sm = eval(TweakMode::SplitSign(-FRAC_PI_2));
                (0..n_out).map(|q| 0.25 * (tp[q] - tm[q]) - 0.25 * (sp[q] - sm[q])).collect()
            }
        })
        .collect();

    let mut jac = vec![vec![0.0; template.param_count()]; n_out];
    for (&slot, contrib) in parametrized.iter().zip(&contributions) {
        let p = template.slots()[slot].param.expect("parametrized slot");
        for (row, c) in jac.iter_mut().zip(contrib) {
            row[p] += c;
        }
    }
    Ok(jac)
}

/// `∂⟨σ_z(output_qubit)⟩/∂θ_j` for every parameter.
pub fn param_shift(circuit: &BoundCircuit<'_>, input: &Statevector, output_qubit: usize) -> Result<Vec<f64>> {
    check_output(circuit, output_qubit)?;
    Ok(param_shift_jacobian(circuit, input)?.swap_remove(output_qubit))
}

fn check_output(circuit: &BoundCircuit<'_>, q: usize) -> Result<()> {
    let n_qubits = circuit.template().n_qubits();
    if q >= n_qubits {
        return Err(Error::QubitIndex { index: q, n_qubits });
    }
    Ok(())
}

/// Central differences `[E(θ_j + h) − E(θ_j − h)] / 2h`.
pub fn finite_diff(circuit: &BoundCircuit<'_>, input: &Statevector, output_qubit: usize, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h <= MAX_FD_STEP) {
        return Err(Error::invalid(format!("finite-difference step {h} outside (0, {MAX_FD_STEP}]")));
    }
    check_output(circuit, output_qubit)?;
    circuit.check(input)?;
    let template = circuit.template();
    let eval = |params: &[f64]| -> f64 {
        let mut state = input.clone();
        template.execute(params, &mut state, None);
        state.expectation_z(output_qubit).expect("validated qubit")
    };
    let mut params = circuit.params().to_vec();
    let mut out = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let orig = params[j];
        params[j] = orig + h;
        let plus = eval(&params);
        params[j] = orig - h;
        let minus = eval(&params);
        params[j] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

fn require_angle(spec: &EncodingSpec) -> Result<()> {
    if spec.scheme != Scheme::Angle {
        return Err(Error::Unsupported(format!(
            "{} encoding is not differentiable with respect to its input",
            spec.scheme.name()
        )));
    }
    Ok(())
}

/// `∂⟨σ_z(q)⟩/∂x_k` through an angle encoding, one row per output qubit.
/// The encoding rotations are shifted by `±π/2` and the result is scaled by
/// the angle map's slope (`π/2` by default).
pub fn input_angle_jacobian(circuit: &BoundCircuit<'_>, x: &[f64], spec: &EncodingSpec) -> Result<Vec<Vec<f64>>> {
    require_angle(spec)?;
    let angles = encoding_angles(x, spec)?;
    circuit.check(&Statevector::zero_state(spec.n_qubits)?)?;
    let slope = spec.angle_map.slope();
    let eval = |k: usize, delta: f64| -> Vec<f64> {
        let mut a = angles.clone();
        a[k] += delta;
        let mut state = rotation_product_state(&a, spec.axis).expect("validated width");
        circuit.template().execute(circuit.params(), &mut state, None);
        state.expectation_z_all()
    };
    let n = spec.n_qubits;
    let mut jac = vec![vec![0.0; n]; n];
    for k in 0..n {
        let plus = eval(k, FRAC_PI_2);
        let minus = eval(k, -FRAC_PI_2);
        for q in 0..n {
            jac[q][k] = slope * 0.5 * (plus[q] - minus[q]);
        }
    }
    Ok(jac)
}

pub fn input_angle_grad(circuit: &BoundCircuit<'_>, x: &[f64], spec: &EncodingSpec, output_qubit: usize) -> Result<Vec<f64>> {
    check_output(circuit, output_qubit)?;
    Ok(input_angle_jacobian(circuit, x, spec)?.swap_remove(output_qubit))
}

/// Both Jacobians for an angle-encoded input `x`.
pub fn quantum_gradient(circuit: &BoundCircuit<'_>, x: &[f64], spec: &EncodingSpec) -> Result<QuantumGradient> {
    let inputs = input_angle_jacobian(circuit, x, spec)?;
    let state = spec.encode(x)?;
    let params = param_shift_jacobian(circuit, &state)?;
    Ok(QuantumGradient { params, inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{build_template, CircuitTemplate, Slot, TemplateKind};
    use crate::encoders::angle_encode;
    use crate::qstate::{Axis, GateKind};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn single_rx() -> CircuitTemplate {
        CircuitTemplate::custom(1, vec![Slot::param(GateKind::Rx, 0, None, 0)]).unwrap()
    }

    #[test]
    fn single_rx_gradient() {
        let t = single_rx();
        let z = Statevector::zero_state(1).unwrap();
        // d cos θ / dθ at π/2 via central difference, h = 1e-4
        let h = 1e-4;
        let oracle = ((PI / 2.0 + h).cos() - (PI / 2.0 - h).cos()) / (2.0 * h);
        let g = param_shift(&t.bind(vec![PI / 2.0]).unwrap(), &z, 0).unwrap();
        assert_abs_diff_eq!(g[0], oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(g[0], -1.0, epsilon = 1e-14);
        let g0 = param_shift(&t.bind(vec![0.0]).unwrap(), &z, 0).unwrap();
        assert_abs_diff_eq!(g0[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn finite_diff_examples() {
        let t = single_rx();
        let z = Statevector::zero_state(1).unwrap();
        let fd = finite_diff(&t.bind(vec![PI / 3.0]).unwrap(), &z, 0, 1e-4).unwrap();
        assert_abs_diff_eq!(fd[0], -(PI / 3.0).sin(), epsilon = 1e-7);

        let fixed = CircuitTemplate::custom(1, vec![Slot::fixed(crate::qstate::Gate::h(0))]).unwrap();
        assert!(finite_diff(&fixed.bind(vec![]).unwrap(), &z, 0, 1e-4).unwrap().is_empty());
        assert!(param_shift(&fixed.bind(vec![]).unwrap(), &z, 0).unwrap().is_empty());

        let b = t.bind(vec![0.1]).unwrap();
        assert!(finite_diff(&b, &z, 0, 0.0).is_err());
        assert!(finite_diff(&b, &z, 0, 0.02).is_err());
        assert!(finite_diff(&b, &z, 1, 1e-4).is_err());
    }

    #[test]
    fn basic_matches_finite_difference() {
        let t = build_template(TemplateKind::Basic, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let params: Vec<f64> = (0..t.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect();
        let b = t.bind(params).unwrap();
        let z = Statevector::zero_state(4).unwrap();
        for q in 0..4 {
            let ps = param_shift(&b, &z, q).unwrap();
            let fd = finite_diff(&b, &z, q, 1e-4).unwrap();
            for (a, f) in ps.iter().zip(&fd) {
                assert!((a - f).abs() <= 1e-6, "{a} vs {f}");
            }
        }
    }

    #[test]
    fn controlled_rotations_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [TemplateKind::C5, TemplateKind::C6, TemplateKind::C16, TemplateKind::C17] {
            let t = build_template(kind, 3, 1).unwrap();
            let params: Vec<f64> = (0..t.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect();
            let b = t.bind(params).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = angle_encode(&x, &EncodingSpec::angle(3, Axis::Y)).unwrap();
            let jac = param_shift_jacobian(&b, &input).unwrap();
            for (q, row) in jac.iter().enumerate() {
                let fd = finite_diff(&b, &input, q, 1e-4).unwrap();
                for (a, f) in row.iter().zip(&fd) {
                    assert!((a - f).abs() <= 1e-6, "{kind}: {a} vs {f}");
                }
            }
        }
    }

    fn fd_input(b: &BoundCircuit<'_>, x: &[f64], spec: &EncodingSpec, q: usize, h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                let mut sp = crate::encoders::rotation_product_state(
                    &xp.iter().map(|&v| spec.angle_map.angle(v)).collect::<Vec<_>>(),
                    spec.axis,
                )
                .unwrap();
                let mut sm = crate::encoders::rotation_product_state(
                    &xm.iter().map(|&v| spec.angle_map.angle(v)).collect::<Vec<_>>(),
                    spec.axis,
                )
                .unwrap();
                sp = b.run(&sp).unwrap();
                sm = b.run(&sm).unwrap();
                (sp.expectation_z(q).unwrap() - sm.expectation_z(q).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn input_gradient_examples() {
        let t = build_template(TemplateKind::C5, 2, 1).unwrap();
        let b = t.bind(vec![0.0; t.param_count()]).unwrap();
        let spec = EncodingSpec::angle(2, Axis::X);
        let g = input_angle_grad(&b, &[0.0, 0.0], &spec, 0).unwrap();
        assert_abs_diff_eq!(g[0], -PI / 2.0, epsilon = 1e-12);
        let oracle = fd_input(&b, &[0.0, 0.0], &spec, 0, 1e-5);
        assert_abs_diff_eq!(g[0], oracle[0], epsilon = 1e-6);
        let g = input_angle_grad(&b, &[-1.0, -1.0], &spec, 0).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);

        let mut amp = spec;
        amp.scheme = Scheme::Amplitude;
        assert!(matches!(input_angle_grad(&b, &[0.0, 0.0], &amp, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for kind in TemplateKind::BUILTIN {
            let t = build_template(kind, 4, 2).unwrap();
            let params: Vec<f64> = (0..t.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect();
            let b = t.bind(params).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.99..0.99)).collect();
            let spec = EncodingSpec::angle(4, Axis::X);
            let jac = input_angle_jacobian(&b, &x, &spec).unwrap();
            for q in 0..4 {
                let fd = fd_input(&b, &x, &spec, q, 1e-5);
                for (a, f) in jac[q].iter().zip(&fd) {
                    assert!((a - f).abs() <= 1e-6, "{kind} q{q}: {a} vs {f}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let t = build_template(TemplateKind::C6, 3, 2).unwrap();
        let params: Vec<f64> = (0..t.param_count()).map(|i| 0.1 * i as f64).collect();
        let b = t.bind(params).unwrap();
        let z = Statevector::zero_state(3).unwrap();
        assert_eq!(param_shift_jacobian(&b, &z).unwrap(), param_shift_jacobian(&b, &z).unwrap());
    }
}
