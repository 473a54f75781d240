//! Dense statevector simulation.
//!
//! Basis index `k` stores qubit 0 in its most significant bit, so for two
//! qubits the amplitudes are ordered `|00⟩, |01⟩, |10⟩, |11⟩` and `|01⟩`
//! means qubit 0 is `0` and qubit 1 is `1`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the dense simulator will allocate.
pub const MAX_QUBITS: usize = 20;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub type Matrix2 = [[Complex64; 2]; 2];

/// Rotation axis of a single-qubit rotation `exp(-i θ/2 σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown rotation axis '{other}'"))),
        }
    }
}

/// `exp(-i θ/2 σ_axis)`.
pub fn rotation_matrix(axis: Axis, theta: f64) -> Matrix2 {
    let (s, c) = (theta / 2.0).sin_cos();
    match axis {
        Axis::X => [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ],
        Axis::Y => [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        Axis::Z => [
            [Complex64::new(c, -s), ZERO],
            [ZERO, Complex64::new(c, s)],
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    H,
    X,
    Cnot,
    CRx,
    CRy,
    CRz,
}

impl GateKind {
    pub fn is_controlled(self) -> bool {
        matches!(self, GateKind::Cnot | GateKind::CRx | GateKind::CRy | GateKind::CRz)
    }

    pub fn is_parametrized(self) -> bool {
        self.rotation_axis().is_some()
    }

    /// Axis of the (possibly controlled) rotation, `None` for fixed gates.
    pub fn rotation_axis(self) -> Option<Axis> {
        match self {
            GateKind::Rx | GateKind::CRx => Some(Axis::X),
            GateKind::Ry | GateKind::CRy => Some(Axis::Y),
            GateKind::Rz | GateKind::CRz => Some(Axis::Z),
            GateKind::H | GateKind::X | GateKind::Cnot => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::Cnot => "cnot",
            GateKind::CRx => "crx",
            GateKind::CRy => "cry",
            GateKind::CRz => "crz",
        }
    }
}

/// A gate placed on concrete wires. `angle` is ignored for H, X and CNOT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub angle: f64,
    pub target: usize,
    pub control: Option<usize>,
}

impl Gate {
    fn single(kind: GateKind, target: usize, angle: f64) -> Self {
        Gate { kind, angle, target, control: None }
    }

    fn controlled(kind: GateKind, control: usize, target: usize, angle: f64) -> Self {
        Gate { kind, angle, target, control: Some(control) }
    }

    pub fn rx(target: usize, theta: f64) -> Self {
        Self::single(GateKind::Rx, target, theta)
    }

    pub fn ry(target: usize, theta: f64) -> Self {
        Self::single(GateKind::Ry, target, theta)
    }

    pub fn rz(target: usize, theta: f64) -> Self {
        Self::single(GateKind::Rz, target, theta)
    }

    pub fn rotation(axis: Axis, target: usize, theta: f64) -> Self {
        let kind = match axis {
            Axis::X => GateKind::Rx,
            Axis::Y => GateKind::Ry,
            Axis::Z => GateKind::Rz,
        };
        Self::single(kind, target, theta)
    }

    pub fn h(target: usize) -> Self {
        Self::single(GateKind::H, target, 0.0)
    }

    pub fn x(target: usize) -> Self {
        Self::single(GateKind::X, target, 0.0)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self::controlled(GateKind::Cnot, control, target, 0.0)
    }

    pub fn crx(control: usize, target: usize, theta: f64) -> Self {
        Self::controlled(GateKind::CRx, control, target, theta)
    }

    pub fn cry(control: usize, target: usize, theta: f64) -> Self {
        Self::controlled(GateKind::CRy, control, target, theta)
    }

    pub fn crz(control: usize, target: usize, theta: f64) -> Self {
        Self::controlled(GateKind::CRz, control, target, theta)
    }

    /// The gate undoing this one: negated angle, or itself for H/X/CNOT.
    pub fn inverse(&self) -> Self {
        let mut inv = *self;
        if self.kind.is_parametrized() {
            inv.angle = -self.angle;
        }
        inv
    }

    /// The 2×2 matrix acting on the target (on the controlled subspace for
    /// controlled kinds).
    pub fn target_matrix(&self) -> Matrix2 {
        match self.kind {
            GateKind::H => {
                let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
                [[h, h], [h, -h]]
            }
            GateKind::X | GateKind::Cnot => [[ZERO, ONE], [ONE, ZERO]],
            kind => rotation_matrix(kind.rotation_axis().expect("rotation kind"), self.angle),
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        check_qubit(self.target, n_qubits)?;
        match (self.kind.is_controlled(), self.control) {
            (true, Some(c)) => {
                check_qubit(c, n_qubits)?;
                if c == self.target {
                    return Err(Error::ControlIsTarget(c));
                }
            }
            (true, None) => {
                return Err(Error::invalid(format!("{} gate needs a control qubit", self.kind.name())))
            }
            (false, Some(_)) => {
                return Err(Error::invalid(format!("{} gate takes no control qubit", self.kind.name())))
            }
            (false, None) => {}
        }
        Ok(())
    }
}

fn check_qubit(index: usize, n_qubits: usize) -> Result<()> {
    if index >= n_qubits {
        Err(Error::QubitIndex { index, n_qubits })
    } else {
        Ok(())
    }
}

/// Dense amplitude vector over `n_qubits` qubits.
#[derive(Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl fmt::Debug for Statevector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Statevector")
            .field("n_qubits", &self.n_qubits)
            .field("amplitudes", &self.amps)
            .finish()
    }
}

impl Statevector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount(n_qubits));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Ok(Statevector { n_qubits, amps })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        let mut s = Self::zero_state(n_qubits)?;
        if index >= s.amps.len() {
            return Err(Error::invalid(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        s.amps[0] = ZERO;
        s.amps[index] = ONE;
        Ok(s)
    }

    /// Wraps raw amplitudes. The caller is responsible for normalization;
    /// only the length is checked.
    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex64>) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount(n_qubits));
        }
        if amps.len() != 1 << n_qubits {
            return Err(Error::dim(format!(
                "{} amplitudes given for {} qubits (need {})",
                amps.len(),
                n_qubits,
                1usize << n_qubits
            )));
        }
        Ok(Statevector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    #[inline]
    fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        let m = gate.target_matrix();
        let control = gate.control.map(|c| (c, true));
        self.apply_matrix(&m, gate.target, control);
        Ok(())
    }

    /// Applies `m` to `target`, restricted to basis states whose `control`
    /// qubit has the given value. Indices must already be validated.
    pub(crate) fn apply_matrix(&mut self, m: &Matrix2, target: usize, control: Option<(usize, bool)>) {
        let tmask = self.mask(target);
        let (cmask, cwant) = match control {
            Some((c, v)) => (self.mask(c), if v { self.mask(c) } else { 0 }),
            None => (0, 0),
        };
        let [[m00, m01], [m10, m11]] = *m;
        for i in 0..self.amps.len() {
            if i & tmask != 0 || i & cmask != cwant {
                continue;
            }
            let j = i | tmask;
            let a = self.amps[i];
            let b = self.amps[j];
            self.amps[i] = m00 * a + m01 * b;
            self.amps[j] = m10 * a + m11 * b;
        }
    }

    /// `exp(-i β/2 Z_control ⊗ σ_axis,target)`: rotates the target by `β`
    /// where the control is `0` and by `-β` where it is `1`.
    pub(crate) fn apply_sign_rotation(&mut self, axis: Axis, control: usize, target: usize, beta: f64) {
        self.apply_matrix(&rotation_matrix(axis, beta), target, Some((control, false)));
        self.apply_matrix(&rotation_matrix(axis, -beta), target, Some((control, true)));
    }

    /// `⟨σ_z⟩` on `qubit`, computed exactly from the amplitudes.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        check_qubit(qubit, self.n_qubits)?;
        let mask = self.mask(qubit);
        Ok(self
            .amps
            .iter()
            .enumerate()
            .map(|(k, a)| if k & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }

    /// `⟨σ_z⟩` for every qubit, in qubit order.
    pub fn expectation_z_all(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits];
        for (k, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, e) in out.iter_mut().enumerate() {
                if k & self.mask(q) == 0 {
                    *e += p;
                } else {
                    *e -= p;
                }
            }
        }
        out
    }

    pub fn inner(&self, other: &Statevector) -> Result<Complex64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::dim(format!(
                "inner product of {}-qubit and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &Statevector) -> Result<f64> {
        let ov = self.inner(other)?;
        // |z|² of the conjugate is identical, so the result is symmetric bit-for-bit.
        Ok(ov.re * ov.re + ov.im * ov.im)
    }

    /// Single-qubit reduced density matrix `[[ρ00, ρ01], [ρ10, ρ11]]`.
    pub fn reduced_density(&self, qubit: usize) -> Result<Matrix2> {
        check_qubit(qubit, self.n_qubits)?;
        let mask = self.mask(qubit);
        let (mut r00, mut r11, mut r01) = (0.0, 0.0, ZERO);
        for i in (0..self.amps.len()).filter(|i| i & mask == 0) {
            let a = self.amps[i];
            let b = self.amps[i | mask];
            r00 += a.norm_sqr();
            r11 += b.norm_sqr();
            r01 += a * b.conj();
        }
        Ok([
            [Complex64::new(r00, 0.0), r01],
            [r01.conj(), Complex64::new(r11, 0.0)],
        ])
    }

    /// `Tr ρ_q²` of the reduced state of `qubit`; 1 for a product factor,
    /// 1/2 when maximally mixed.
    pub fn reduced_purity(&self, qubit: usize) -> Result<f64> {
        let [[r00, r01], [_, r11]] = self.reduced_density(qubit)?;
        Ok(r00.re * r00.re + r11.re * r11.re + 2.0 * r01.norm_sqr())
    }
}

pub fn zero_state(n_qubits: usize) -> Result<Statevector> {
    Statevector::zero_state(n_qubits)
}

/// Applies `gate` and hands the state back.
pub fn apply_gate(mut state: Statevector, gate: &Gate) -> Result<Statevector> {
    state.apply(gate)?;
    Ok(state)
}

pub fn expectation_z(state: &Statevector, qubit: usize) -> Result<f64> {
    state.expectation_z(qubit)
}

pub fn fidelity(a: &Statevector, b: &Statevector) -> Result<f64> {
    a.fidelity(b)
}

pub fn reduced_purity(state: &Statevector, qubit: usize) -> Result<f64> {
    state.reduced_purity(qubit)
}
