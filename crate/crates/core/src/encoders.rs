//! Classical-to-quantum embeddings: basis, amplitude and angle encoding.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qstate::{rotation_matrix, Axis, Statevector};

/// Slack on the `[-1, 1]` bound for angle-encoded features.
pub const ANGLE_INPUT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Basis,
    Amplitude,
    Angle,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Basis => "basis",
            Scheme::Amplitude => "amplitude",
            Scheme::Angle => "angle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basis" => Ok(Scheme::Basis),
            "amplitude" => Ok(Scheme::Amplitude),
            "angle" => Ok(Scheme::Angle),
            other => Err(Error::invalid(format!("unknown encoding '{other}'"))),
        }
    }
}

/// Affine map from a feature interval onto rotation angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleMap {
    pub lo: f64,
    pub hi: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl Default for AngleMap {
    /// `[-1, 1] → [0, π]`, i.e. `θ = (x + 1)·π/2`.
    fn default() -> Self {
        AngleMap { lo: -1.0, hi: 1.0, theta_lo: 0.0, theta_hi: std::f64::consts::PI }
    }
}

impl AngleMap {
    pub fn slope(&self) -> f64 {
        (self.theta_hi - self.theta_lo) / (self.hi - self.lo)
    }

    pub fn angle(&self, x: f64) -> f64 {
        self.theta_lo + (x - self.lo) * self.slope()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingSpec {
    pub scheme: Scheme,
    pub n_qubits: usize,
    pub axis: Axis,
    pub angle_map: AngleMap,
}

impl EncodingSpec {
    pub fn angle(n_qubits: usize, axis: Axis) -> Self {
        EncodingSpec { scheme: Scheme::Angle, n_qubits, axis, angle_map: AngleMap::default() }
    }

    pub fn new(scheme: Scheme, n_qubits: usize) -> Self {
        EncodingSpec { scheme, n_qubits, axis: Axis::X, angle_map: AngleMap::default() }
    }

    /// Encodes a real feature vector according to the scheme. Basis encoding
    /// thresholds each feature at zero (`x > 0 → 1`).
    pub fn encode(&self, x: &[f64]) -> Result<Statevector> {
        match self.scheme {
            Scheme::Angle => angle_encode(x, self),
            Scheme::Amplitude => amplitude_encode(x, self.n_qubits),
            Scheme::Basis => {
                if x.len() != self.n_qubits {
                    return Err(Error::dim(format!(
                        "basis encoding of {} features on {} qubits",
                        x.len(),
                        self.n_qubits
                    )));
                }
                let bits: String = x.iter().map(|&v| if v > 0.0 { '1' } else { '0' }).collect();
                basis_encode(&bits)
            }
        }
    }
}

/// `|bits⟩`, with the first character on qubit 0 (most significant).
pub fn basis_encode(bits: &str) -> Result<Statevector> {
    if bits.is_empty() {
        return Err(Error::invalid("empty bit string"));
    }
    let mut index = 0usize;
    for ch in bits.chars() {
        let bit = match ch {
            '0' => 0,
            '1' => 1,
            other => return Err(Error::invalid(format!("non-binary character '{other}' in bit string"))),
        };
        index = (index << 1) | bit;
    }
    Statevector::basis_state(bits.chars().count(), index)
}

/// Zero-pads `x` to `2^n_qubits` entries and normalizes it to unit length.
pub fn amplitude_encode(x: &[f64], n_qubits: usize) -> Result<Statevector> {
    let dim = 1usize
        .checked_shl(n_qubits as u32)
        .filter(|_| n_qubits <= crate::qstate::MAX_QUBITS)
        .ok_or(Error::QubitCount(n_qubits))?;
    if x.len() > dim {
        return Err(Error::dim(format!("{} values do not fit in {} qubits", x.len(), n_qubits)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in amplitude input"));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("cannot amplitude-encode an all-zero vector"));
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    for (a, &v) in amps.iter_mut().zip(x) {
        *a = Complex64::new(v / norm, 0.0);
    }
    Statevector::from_amplitudes(n_qubits, amps)
}

/// Rotation angles for angle encoding, after validating the input range.
pub fn encoding_angles(x: &[f64], spec: &EncodingSpec) -> Result<Vec<f64>> {
    if x.len() != spec.n_qubits {
        return Err(Error::dim(format!(
            "angle encoding of {} features on {} qubits",
            x.len(),
            spec.n_qubits
        )));
    }
    let (lo, hi) = (spec.angle_map.lo, spec.angle_map.hi);
    for &v in x {
        if !(v >= lo - ANGLE_INPUT_SLACK && v <= hi + ANGLE_INPUT_SLACK) {
            return Err(Error::invalid(format!("feature {v} outside [{lo}, {hi}]")));
        }
    }
    Ok(x.iter().map(|&v| spec.angle_map.angle(v)).collect())
}

/// Product state `⊗_k R_axis(θ_k)|0⟩` built directly from angles.
pub fn rotation_product_state(angles: &[f64], axis: Axis) -> Result<Statevector> {
    let mut state = Statevector::zero_state(angles.len())?;
    for (q, &theta) in angles.iter().enumerate() {
        state.apply_matrix(&rotation_matrix(axis, theta), q, None);
    }
    Ok(state)
}

/// `⊗_k R_axis(θ_k)|0⟩` with `θ_k` from the spec's affine angle map.
pub fn angle_encode(x: &[f64], spec: &EncodingSpec) -> Result<Statevector> {
    if spec.scheme != Scheme::Angle {
        return Err(Error::invalid("angle_encode called with a non-angle encoding spec"));
    }
    rotation_product_state(&encoding_angles(x, spec)?, spec.axis)
}

/// `dθ/dx` of the default map, `π/2`.
pub const DEFAULT_ANGLE_SLOPE: f64 = FRAC_PI_2;
