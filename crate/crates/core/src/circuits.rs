//! Parametrized circuit templates and their execution.
//!
//! Layouts, one layer each (`n` qubits):
//!
//! * `basic`: `Rx` on every qubit, then `CNOT(i, i+1)` for `i = 0..n-1`.
//! * `c5`: `Rx`,`Rz` on every qubit; `CRz(c→t)` for every ordered pair
//!   `c ≠ t`, controls in descending order; `Rx`,`Rz` on every qubit.
//! * `c6`: `c5` with `CRx` entanglers.
//! * `c16`: `Rx`,`Rz` on every qubit; `CRz(2k+1→2k)` for all `k`, then
//!   `CRz(2k+2→2k+1)` for all `k`.
//! * `c17`: `c16` with `CRx` entanglers.
//!
//! Every rotation owns a fresh parameter, numbered in slot order.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::qstate::{rotation_matrix, Gate, GateKind, Statevector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Basic,
    C5,
    C6,
    C16,
    C17,
    /// Hand-assembled slot list.
    Custom,
}

impl TemplateKind {
    pub const BUILTIN: [TemplateKind; 5] =
        [TemplateKind::Basic, TemplateKind::C5, TemplateKind::C6, TemplateKind::C16, TemplateKind::C17];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Basic => "basic",
            TemplateKind::C5 => "c5",
            TemplateKind::C6 => "c6",
            TemplateKind::C16 => "c16",
            TemplateKind::C17 => "c17",
            TemplateKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Ok(TemplateKind::Basic),
            "c5" => Ok(TemplateKind::C5),
            "c6" => Ok(TemplateKind::C6),
            "c16" => Ok(TemplateKind::C16),
            "c17" => Ok(TemplateKind::C17),
            other => Err(Error::Unsupported(format!("circuit template '{other}'"))),
        }
    }

    /// Parameters per layer for the builtin layouts.
    pub fn params_per_layer(self, n_qubits: usize) -> Option<usize> {
        let n = n_qubits;
        match self {
            TemplateKind::Basic => Some(n),
            TemplateKind::C5 | TemplateKind::C6 => Some(4 * n + n * (n - 1)),
            TemplateKind::C16 | TemplateKind::C17 => Some(2 * n + (n - 1)),
            TemplateKind::Custom => None,
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One gate position. Parametrized slots read `params[param]`; fixed
/// rotations in custom templates carry their angle in `fixed_angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub param: Option<usize>,
    pub fixed_angle: f64,
}

impl Slot {
    pub fn param(kind: GateKind, target: usize, control: Option<usize>, index: usize) -> Self {
        Slot { kind, target, control, param: Some(index), fixed_angle: 0.0 }
    }

    pub fn fixed(gate: Gate) -> Self {
        Slot { kind: gate.kind, target: gate.target, control: gate.control, param: None, fixed_angle: gate.angle }
    }

    fn gate(&self, params: &[f64]) -> Gate {
        let angle = self.param.map_or(self.fixed_angle, |p| params[p]);
        Gate { kind: self.kind, angle, target: self.target, control: self.control }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitTemplate {
    kind: TemplateKind,
    n_qubits: usize,
    n_layers: usize,
    slots: Vec<Slot>,
    param_count: usize,
    entangling: Vec<Range<usize>>,
}

struct LayerBuilder {
    slots: Vec<Slot>,
    next: usize,
    entangling: Vec<Range<usize>>,
}

impl LayerBuilder {
    fn rot(&mut self, kind: GateKind, target: usize) {
        self.slots.push(Slot::param(kind, target, None, self.next));
        self.next += 1;
    }

    fn crot(&mut self, kind: GateKind, control: usize, target: usize) {
        self.slots.push(Slot::param(kind, target, Some(control), self.next));
        self.next += 1;
    }

    fn rx_rz_all(&mut self, n: usize) {
        for q in 0..n {
            self.rot(GateKind::Rx, q);
            self.rot(GateKind::Rz, q);
        }
    }

    fn entangle(&mut self, body: impl FnOnce(&mut Self)) {
        let start = self.slots.len();
        body(self);
        self.entangling.push(start..self.slots.len());
    }
}

impl CircuitTemplate {
    pub fn build(kind: TemplateKind, n_qubits: usize, n_layers: usize) -> Result<Self> {
        if kind == TemplateKind::Custom {
            return Err(Error::Unsupported("custom templates are built with CircuitTemplate::custom".into()));
        }
        if !(1..=crate::qstate::MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount(n_qubits));
        }
        if n_qubits < 2 {
            return Err(Error::invalid(format!("{kind} template needs at least 2 qubits")));
        }
        if n_layers == 0 {
            return Err(Error::invalid("circuit needs at least one layer"));
        }
        let n = n_qubits;
        let mut b = LayerBuilder { slots: Vec::new(), next: 0, entangling: Vec::new() };
        for _ in 0..n_layers {
            match kind {
                TemplateKind::Basic => {
                    for q in 0..n {
                        b.rot(GateKind::Rx, q);
                    }
                    b.entangle(|b| {
                        for i in 0..n - 1 {
                            b.slots.push(Slot::fixed(Gate::cnot(i, i + 1)));
                        }
                    });
                }
                TemplateKind::C5 | TemplateKind::C6 => {
                    let ck = if kind == TemplateKind::C5 { GateKind::CRz } else { GateKind::CRx };
                    b.rx_rz_all(n);
                    b.entangle(|b| {
                        for c in (0..n).rev() {
                            for t in (0..n).rev().filter(|&t| t != c) {
                                b.crot(ck, c, t);
                            }
                        }
                    });
                    b.rx_rz_all(n);
                }
                TemplateKind::C16 | TemplateKind::C17 => {
                    let ck = if kind == TemplateKind::C16 { GateKind::CRz } else { GateKind::CRx };
                    b.rx_rz_all(n);
                    b.entangle(|b| {
                        for k in (0..).take_while(|k| 2 * k + 1 < n) {
                            b.crot(ck, 2 * k + 1, 2 * k);
                        }
                        for k in (0..).take_while(|k| 2 * k + 2 < n) {
                            b.crot(ck, 2 * k + 2, 2 * k + 1);
                        }
                    });
                }
                TemplateKind::Custom => unreachable!(),
            }
        }
        Ok(CircuitTemplate {
            kind,
            n_qubits,
            n_layers,
            param_count: b.next,
            slots: b.slots,
            entangling: b.entangling,
        })
    }

    /// A hand-written slot list. Parameter indices must be contiguous from 0.
    pub fn custom(n_qubits: usize, slots: Vec<Slot>) -> Result<Self> {
        if !(1..=crate::qstate::MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount(n_qubits));
        }
        let mut used = Vec::new();
        for s in &slots {
            for index in std::iter::once(s.target).chain(s.control) {
                if index >= n_qubits {
                    return Err(Error::QubitIndex { index, n_qubits });
                }
            }
            if s.control == Some(s.target) {
                return Err(Error::ControlIsTarget(s.target));
            }
            if s.kind.is_controlled() != s.control.is_some() {
                return Err(Error::invalid(format!("{} slot has wrong control arity", s.kind.name())));
            }
            if let Some(p) = s.param {
                if !s.kind.is_parametrized() {
                    return Err(Error::Unsupported(format!(
                        "parameter on non-rotation gate {}",
                        s.kind.name()
                    )));
                }
                if used.len() <= p {
                    used.resize(p + 1, false);
                }
                used[p] = true;
            }
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(Error::invalid(format!("parameter index {missing} is never used")));
        }
        Ok(CircuitTemplate {
            kind: TemplateKind::Custom,
            n_qubits,
            n_layers: 1,
            param_count: used.len(),
            slots,
            entangling: Vec::new(),
        })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Slot ranges of the entangling sub-layer of each layer.
    pub fn entangling_blocks(&self) -> &[Range<usize>] {
        &self.entangling
    }

    /// Copy of the template with slots reordered by `order` (a permutation
    /// of slot indices). Parameter numbering travels with the slots.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.slots.len()];
        if order.len() != self.slots.len() {
            return Err(Error::dim("slot permutation has wrong length"));
        }
        for &i in order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("slot order is not a permutation"));
            }
        }
        let mut t = self.clone();
        t.slots = order.iter().map(|&i| self.slots[i]).collect();
        Ok(t)
    }

    pub fn bind(&self, params: Vec<f64>) -> Result<BoundCircuit<'_>> {
        BoundCircuit::new(self, params)
    }

    fn check_input(&self, params: &[f64], input: &Statevector) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::dim(format!(
                "{} parameters given, template takes {}",
                params.len(),
                self.param_count
            )));
        }
        if input.n_qubits() != self.n_qubits {
            return Err(Error::dim(format!(
                "{}-qubit input to a {}-qubit circuit",
                input.n_qubits(),
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Runs the slots on `state` in place, optionally perturbing one slot.
    /// Inputs are assumed validated.
    pub(crate) fn execute(&self, params: &[f64], state: &mut Statevector, tweak: Option<SlotTweak>) {
        for (i, slot) in self.slots.iter().enumerate() {
            let gate = slot.gate(params);
            match tweak {
                Some(t) if t.slot == i => apply_tweaked(state, &gate, t.mode),
                _ => state.apply_matrix(&gate.target_matrix(), gate.target, gate.control.map(|c| (c, true))),
            }
        }
    }
}

/// How a slot is perturbed during gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TweakMode {
    /// Angle shifted by `delta`.
    Shift(f64),
    /// Controlled rotation split as `R_t(θ/2 + delta) · ZR(-θ/2)`.
    SplitTarget(f64),
    /// Controlled rotation split as `R_t(θ/2) · ZR(-θ/2 + delta)`.
    SplitSign(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SlotTweak {
    pub slot: usize,
    pub mode: TweakMode,
}

fn apply_tweaked(state: &mut Statevector, gate: &Gate, mode: TweakMode) {
    let axis = gate.kind.rotation_axis();
    match (mode, axis, gate.control) {
        (TweakMode::Shift(d), Some(axis), control) => {
            state.apply_matrix(&rotation_matrix(axis, gate.angle + d), gate.target, control.map(|c| (c, true)));
        }
        (TweakMode::SplitTarget(d), Some(axis), Some(c)) => {
            state.apply_matrix(&rotation_matrix(axis, gate.angle / 2.0 + d), gate.target, None);
            state.apply_sign_rotation(axis, c, gate.target, -gate.angle / 2.0);
        }
        (TweakMode::SplitSign(d), Some(axis), Some(c)) => {
            state.apply_matrix(&rotation_matrix(axis, gate.angle / 2.0), gate.target, None);
            state.apply_sign_rotation(axis, c, gate.target, -gate.angle / 2.0 + d);
        }
        _ => unreachable!("tweak {mode:?} on {:?}", gate.kind),
    }
}

/// A template with concrete angles.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCircuit<'t> {
    template: &'t CircuitTemplate,
    params: Vec<f64>,
}

impl<'t> BoundCircuit<'t> {
    pub fn new(template: &'t CircuitTemplate, params: Vec<f64>) -> Result<Self> {
        if params.len() != template.param_count {
            return Err(Error::dim(format!(
                "{} parameters given, template takes {}",
                params.len(),
                template.param_count
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite circuit parameter"));
        }
        Ok(BoundCircuit { template, params })
    }

    pub fn template(&self) -> &'t CircuitTemplate {
        self.template
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn run(&self, input: &Statevector) -> Result<Statevector> {
        self.template.check_input(&self.params, input)?;
        let mut state = input.clone();
        self.template.execute(&self.params, &mut state, None);
        Ok(state)
    }

    /// `⟨σ_z⟩` of every qubit of the output state.
    pub fn measure_all_z(&self, input: &Statevector) -> Result<Vec<f64>> {
        Ok(self.run(input)?.expectation_z_all())
    }

    pub(crate) fn check(&self, input: &Statevector) -> Result<()> {
        self.template.check_input(&self.params, input)
    }
}

pub fn build_template(kind: TemplateKind, n_qubits: usize, n_layers: usize) -> Result<CircuitTemplate> {
    CircuitTemplate::build(kind, n_qubits, n_layers)
}

pub fn run(circuit: &BoundCircuit<'_>, input: &Statevector) -> Result<Statevector> {
    circuit.run(input)
}

pub fn measure_all_z(circuit: &BoundCircuit<'_>, input: &Statevector) -> Result<Vec<f64>> {
    circuit.measure_all_z(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn random_params(t: &CircuitTemplate, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect()
    }

    fn count(t: &CircuitTemplate, kind: GateKind) -> usize {
        t.slots().iter().filter(|s| s.kind == kind).count()
    }

    #[test]
    fn basic_four_by_three() {
        let t = build_template(TemplateKind::Basic, 4, 3).unwrap();
        assert_eq!(t.param_count(), 12);
        assert_eq!(count(&t, GateKind::Cnot), 9);
        assert_eq!(count(&t, GateKind::Rx), 12);
        // Rx(θ_{i + n·j}) on qubit i of layer j
        let rx: Vec<_> = t.slots().iter().filter(|s| s.kind == GateKind::Rx).collect();
        for (k, s) in rx.iter().enumerate() {
            assert_eq!(s.param, Some(k));
            assert_eq!(s.target, k % 4);
        }
        let cnots: Vec<_> = t.slots()[4..7].iter().map(|s| (s.control.unwrap(), s.target)).collect();
        assert_eq!(cnots, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn zoo_counts_from_layout() {
        // Slot counting oracle: single-qubit + controlled rotations.
        let c5 = build_template(TemplateKind::C5, 4, 1).unwrap();
        let singles = count(&c5, GateKind::Rx) + count(&c5, GateKind::Rz);
        assert_eq!((singles, count(&c5, GateKind::CRz)), (16, 12));
        assert_eq!(c5.param_count(), 28);
        let c16 = build_template(TemplateKind::C16, 4, 1).unwrap();
        let singles = count(&c16, GateKind::Rx) + count(&c16, GateKind::Rz);
        assert_eq!((singles, count(&c16, GateKind::CRz)), (8, 3));
        assert_eq!(c16.param_count(), 11);
        let pairs: Vec<_> = c16.slots()[8..].iter().map(|s| (s.control.unwrap(), s.target)).collect();
        assert_eq!(pairs, vec![(1, 0), (3, 2), (2, 1)]);
        assert_eq!(count(&build_template(TemplateKind::C6, 4, 1).unwrap(), GateKind::CRx), 12);
        assert_eq!(count(&build_template(TemplateKind::C17, 4, 1).unwrap(), GateKind::CRx), 3);
    }

    #[test]
    fn c5_control_order_descends() {
        let t = build_template(TemplateKind::C5, 3, 1).unwrap();
        let pairs: Vec<_> = t.slots()[t.entangling_blocks()[0].clone()]
            .iter()
            .map(|s| (s.control.unwrap(), s.target))
            .collect();
        assert_eq!(pairs, vec![(2, 1), (2, 0), (1, 2), (1, 0), (0, 2), (0, 1)]);
    }

    #[test]
    fn build_errors() {
        assert!(build_template(TemplateKind::C5, 1, 1).is_err());
        assert!(build_template(TemplateKind::Basic, 4, 0).is_err());
        assert!(build_template(TemplateKind::Custom, 4, 1).is_err());
        assert!(TemplateKind::parse("c7").is_err());
        assert_eq!(TemplateKind::parse("C16").unwrap(), TemplateKind::C16);
    }

    #[test]
    fn zero_params_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [TemplateKind::C5, TemplateKind::C6, TemplateKind::C16, TemplateKind::C17] {
            let t = build_template(kind, 4, 2).unwrap();
            let bound = t.bind(vec![0.0; t.param_count()]).unwrap();
            let mut input = Statevector::zero_state(4).unwrap();
            for q in 0..4 {
                input.apply(&Gate::ry(q, rng.gen_range(0.0..PI))).unwrap();
                input.apply(&Gate::rz(q, rng.gen_range(0.0..PI))).unwrap();
            }
            input.apply(&Gate::cnot(0, 2)).unwrap();
            let out = bound.run(&input).unwrap();
            for (a, b) in out.amplitudes().iter().zip(input.amplitudes()) {
                assert!((a - b).norm() <= 1e-12);
            }
            let z = Statevector::zero_state(4).unwrap();
            assert_eq!(bound.run(&z).unwrap(), z);
        }
        let basic = build_template(TemplateKind::Basic, 4, 1).unwrap();
        let z = Statevector::zero_state(4).unwrap();
        let bound = basic.bind(vec![0.0; 4]).unwrap();
        assert_eq!(bound.run(&z).unwrap(), z);
        assert_eq!(bound.measure_all_z(&z).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn single_rx_measurement() {
        let t = CircuitTemplate::custom(1, vec![Slot::param(GateKind::Rx, 0, None, 0)]).unwrap();
        let z = t.bind(vec![PI / 2.0]).unwrap().measure_all_z(&Statevector::zero_state(1).unwrap()).unwrap();
        assert!(z[0].abs() < 1e-15);
    }

    #[test]
    fn run_errors() {
        let t = build_template(TemplateKind::C16, 3, 1).unwrap();
        assert!(t.bind(vec![0.0; 3]).is_err());
        assert!(t.bind(vec![f64::NAN; t.param_count()]).is_err());
        let b = t.bind(vec![0.0; t.param_count()]).unwrap();
        assert!(b.run(&Statevector::zero_state(4).unwrap()).is_err());
    }

    #[test]
    fn custom_template_validation() {
        assert!(CircuitTemplate::custom(2, vec![Slot::param(GateKind::Rx, 0, None, 1)]).is_err());
        assert!(CircuitTemplate::custom(2, vec![Slot::param(GateKind::H, 0, None, 0)]).is_err());
        assert!(CircuitTemplate::custom(2, vec![Slot::fixed(Gate::cnot(1, 1))]).is_err());
        assert!(CircuitTemplate::custom(2, vec![Slot::param(GateKind::CRz, 0, None, 0)]).is_err());
        let bell = CircuitTemplate::custom(2, vec![Slot::fixed(Gate::h(0)), Slot::fixed(Gate::cnot(0, 1))]).unwrap();
        assert_eq!(bell.param_count(), 0);
    }

    #[test]
    fn random_c5_outputs_bounded_and_deterministic() {
        let t = build_template(TemplateKind::C5, 4, 4).unwrap();
        let b = t.bind(random_params(&t, 11)).unwrap();
        let z = Statevector::zero_state(4).unwrap();
        let m1 = b.measure_all_z(&z).unwrap();
        let m2 = b.measure_all_z(&z).unwrap();
        assert_eq!(m1, m2);
        assert!(m1.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn param_count_formulas(n in 2usize..=8, layers in 1usize..=4) {
            for kind in TemplateKind::BUILTIN {
                let t = build_template(kind, n, layers).unwrap();
                prop_assert_eq!(t.param_count(), layers * kind.params_per_layer(n).unwrap());
                let mut idx: Vec<_> = t.slots().iter().filter_map(|s| s.param).collect();
                idx.sort_unstable();
                prop_assert_eq!(idx, (0..t.param_count()).collect::<Vec<_>>());
            }
        }

        #[test]
        fn run_preserves_norm(seed in any::<u64>(), k in 0usize..5) {
            let t = build_template(TemplateKind::BUILTIN[k], 4, 2).unwrap();
            let out = t.bind(random_params(&t, seed)).unwrap().run(&Statevector::zero_state(4).unwrap()).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn crz_entanglers_commute(seed in any::<u64>(), use_c16 in any::<bool>(), n in 2usize..=5) {
            let kind = if use_c16 { TemplateKind::C16 } else { TemplateKind::C5 };
            let t = build_template(kind, n, 2).unwrap();
            let params = random_params(&t, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut order: Vec<usize> = (0..t.slots().len()).collect();
            for block in t.entangling_blocks() {
                let sub = &mut order[block.clone()];
                for i in (1..sub.len()).rev() {
                    sub.swap(i, rng.gen_range(0..=i));
                }
            }
            let permuted = t.permuted(&order).unwrap();
            let mut input = Statevector::zero_state(n).unwrap();
            for q in 0..n {
                input.apply(&Gate::ry(q, rng.gen_range(0.0..PI))).unwrap();
            }
            let a = t.bind(params.clone()).unwrap().run(&input).unwrap();
            let b = permuted.bind(params).unwrap().run(&input).unwrap();
            for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
                prop_assert!((x - y).norm() <= 1e-12);
            }
        }
    }
}
