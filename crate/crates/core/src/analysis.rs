//! Descriptors of a circuit template as a state generator.
//!
//! * Expressibility: KL divergence between the distribution of fidelities
//!   `|⟨ψ(θ)|ψ(φ)⟩|²` over random parameter pairs and the Haar distribution
//!   `P(F) = (D−1)(1−F)^{D−2}`, `D = 2^n`. Lower is more expressive.
//! * Entangling capability: mean Meyer–Wallach measure
//!   `Q = 2(1 − (1/n) Σ_k Tr ρ_k²)` over random parameters.
//!
//! Parameters are uniform in `[0, 2π)` and circuits start from `|0…0⟩`.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::CircuitTemplate;
use crate::error::{Error, Result};
use crate::qstate::Statevector;
use crate::stream_rng;

pub const DEFAULT_SAMPLES: usize = 5000;
pub const DEFAULT_BINS: usize = 75;
pub const MIN_SAMPLES: usize = 1000;
pub const MIN_BINS: usize = 10;
/// Probability given to empty histogram bins before the KL sum.
pub const EMPTY_BIN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressibilityReport {
    pub template: String,
    pub n_qubits: usize,
    pub n_layers: usize,
    pub samples: usize,
    pub bins: usize,
    pub kl_divergence: f64,
    /// Fidelity counts over `bins` equal-width bins of `[0, 1]`.
    pub histogram: Vec<u64>,
    pub empty_bin_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub template: String,
    pub n_qubits: usize,
    pub n_layers: usize,
    pub samples: usize,
    pub mean_q: f64,
    pub std_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub seed: u64,
    pub expressibility: ExpressibilityReport,
    pub entanglement: EntanglementReport,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::format(format!("analysis report: {e}")))
    }
}

/// Haar probability of each of `bins` equal-width fidelity bins in
/// dimension `dim`.
pub fn haar_bin_masses(dim: usize, bins: usize) -> Vec<f64> {
    let e = (dim - 1) as i32;
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            (1.0 - lo).powi(e) - (1.0 - hi).powi(e)
        })
        .collect()
}

fn random_state(template: &CircuitTemplate, rng: &mut impl Rng) -> Statevector {
    let params: Vec<f64> = (0..template.param_count()).map(|_| rng.gen_range(0.0..TAU)).collect();
    let mut state = Statevector::zero_state(template.n_qubits()).expect("template width is valid");
    template.execute(&params, &mut state, None);
    state
}

fn check_samples(n_samples: usize) -> Result<()> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::invalid(format!("need at least {MIN_SAMPLES} samples, got {n_samples}")));
    }
    Ok(())
}

pub fn expressibility(template: &CircuitTemplate, n_samples: usize, n_bins: usize, seed: u64) -> Result<ExpressibilityReport> {
    check_samples(n_samples)?;
    if n_bins < MIN_BINS {
        return Err(Error::invalid(format!("need at least {MIN_BINS} bins, got {n_bins}")));
    }
    if template.param_count() == 0 {
        return Err(Error::invalid("template has no parameters; its fidelity distribution is degenerate"));
    }
    let fidelities: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let a = random_state(template, &mut rng);
            let b = random_state(template, &mut rng);
            a.fidelity(&b).expect("same width")
        })
        .collect();

    let mut histogram = vec![0u64; n_bins];
    for f in &fidelities {
        let b = ((f.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
        histogram[b] += 1;
    }
    let floored: Vec<f64> =
        histogram.iter().map(|&c| (c as f64 / n_samples as f64).max(EMPTY_BIN_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    let haar = haar_bin_masses(1 << template.n_qubits(), n_bins);
    let kl: f64 = floored
        .iter()
        .zip(&haar)
        .map(|(p, q)| {
            let p = p / total;
            p * (p / q.max(f64::MIN_POSITIVE)).ln()
        })
        .sum();
    Ok(ExpressibilityReport {
        template: template.kind().name().to_owned(),
        n_qubits: template.n_qubits(),
        n_layers: template.n_layers(),
        samples: n_samples,
        bins: n_bins,
        // rounding can leave a tiny negative sum when the two agree
        kl_divergence: kl.max(0.0),
        histogram,
        empty_bin_floor: EMPTY_BIN_FLOOR,
    })
}

/// Meyer–Wallach `Q` of a pure state.
pub fn meyer_wallach(state: &Statevector) -> f64 {
    let n = state.n_qubits();
    let mean_purity = (0..n).map(|k| state.reduced_purity(k).expect("valid qubit")).sum::<f64>() / n as f64;
    (2.0 * (1.0 - mean_purity)).clamp(0.0, 1.0)
}

pub fn entangling_capability(template: &CircuitTemplate, n_samples: usize, seed: u64) -> Result<EntanglementReport> {
    check_samples(n_samples)?;
    let qs: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| meyer_wallach(&random_state(template, &mut stream_rng(seed, i))))
        .collect();
    let mean = qs.iter().sum::<f64>() / n_samples as f64;
    let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / n_samples as f64;
    Ok(EntanglementReport {
        template: template.kind().name().to_owned(),
        n_qubits: template.n_qubits(),
        n_layers: template.n_layers(),
        samples: n_samples,
        mean_q: mean,
        std_q: var.sqrt(),
    })
}

pub fn analyze(template: &CircuitTemplate, n_samples: usize, n_bins: usize, seed: u64) -> Result<AnalysisReport> {
    Ok(AnalysisReport {
        seed,
        expressibility: expressibility(template, n_samples, n_bins, seed)?,
        entanglement: entangling_capability(template, n_samples, seed)?,
    })
}
