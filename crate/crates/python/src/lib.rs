//! Python bindings for the `qdefect` crate.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use qdefect::analysis;
use qdefect::circuits::{CircuitTemplate, TemplateKind};
use qdefect::data::{self, Pattern};
use qdefect::encoders::{self, EncodingSpec};
use qdefect::gradients;
use qdefect::hybrid::{self, HybridModel, ModelConfig, TrainConfig, Variant};
use qdefect::qstate::{self, Axis, Gate};

fn err(e: qdefect::Error) -> PyErr {
    match e {
        qdefect::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for qdefect::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(name = "Statevector", module = "pyqdefect", skip_from_py_object)]
#[derive(Clone)]
struct PyStatevector(qstate::Statevector);

fn gate(name: &str, target: usize, control: Option<usize>, theta: Option<f64>) -> PyResult<Gate> {
    let need = |t: Option<f64>| t.ok_or_else(|| PyValueError::new_err(format!("{name} needs theta")));
    let ctrl = || control.ok_or_else(|| PyValueError::new_err(format!("{name} needs control")));
    Ok(match name.to_ascii_lowercase().as_str() {
        "rx" => Gate::rx(target, need(theta)?),
        "ry" => Gate::ry(target, need(theta)?),
        "rz" => Gate::rz(target, need(theta)?),
        "h" => Gate::h(target),
        "x" => Gate::x(target),
        "cnot" => Gate::cnot(ctrl()?, target),
        "crx" => Gate::crx(ctrl()?, target, need(theta)?),
        "cry" => Gate::cry(ctrl()?, target, need(theta)?),
        "crz" => Gate::crz(ctrl()?, target, need(theta)?),
        other => return Err(PyValueError::new_err(format!("unknown gate '{other}'"))),
    })
}

#[pymethods]
impl PyStatevector {
    /// `|0…0⟩` on `n_qubits` qubits.
    #[new]
    fn new(n_qubits: usize) -> PyResult<Self> {
        qstate::Statevector::zero_state(n_qubits).py().map(Self)
    }

    #[staticmethod]
    fn basis(n_qubits: usize, index: usize) -> PyResult<Self> {
        qstate::Statevector::basis_state(n_qubits, index).py().map(Self)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    /// Applies a named gate (`rx ry rz h x cnot crx cry crz`).
    #[pyo3(signature = (name, target, control=None, theta=None))]
    fn apply(&mut self, name: &str, target: usize, control: Option<usize>, theta: Option<f64>) -> PyResult<()> {
        let g = gate(name, target, control, theta)?;
        self.0.apply(&g).py()
    }

    fn expectation_z(&self, qubit: usize) -> PyResult<f64> {
        self.0.expectation_z(qubit).py()
    }

    fn expectations(&self) -> Vec<f64> {
        self.0.expectation_z_all()
    }

    /// Amplitudes as `complex` values, qubit 0 most significant.
    fn amplitudes(&self) -> Vec<num_complex::Complex64> {
        self.0.amplitudes().to_vec()
    }

    fn norm_sqr(&self) -> f64 {
        self.0.norm_sqr()
    }

    fn fidelity(&self, other: &PyStatevector) -> PyResult<f64> {
        self.0.fidelity(&other.0).py()
    }

    fn reduced_purity(&self, qubit: usize) -> PyResult<f64> {
        self.0.reduced_purity(qubit).py()
    }

    fn __repr__(&self) -> String {
        format!("Statevector(n_qubits={})", self.0.n_qubits())
    }
}

#[pyfunction]
fn basis_encode(bits: &str) -> PyResult<PyStatevector> {
    encoders::basis_encode(bits).py().map(PyStatevector)
}

#[pyfunction]
#[pyo3(signature = (x, axis="x"))]
fn angle_encode(x: Vec<f64>, axis: &str) -> PyResult<PyStatevector> {
    let spec = EncodingSpec::angle(x.len(), Axis::parse(axis).py()?);
    encoders::angle_encode(&x, &spec).py().map(PyStatevector)
}

#[pyfunction]
fn amplitude_encode(x: Vec<f64>, n_qubits: usize) -> PyResult<PyStatevector> {
    encoders::amplitude_encode(&x, n_qubits).py().map(PyStatevector)
}

#[pyclass(name = "CircuitTemplate", module = "pyqdefect", skip_from_py_object)]
struct PyTemplate(CircuitTemplate);

#[pymethods]
impl PyTemplate {
    /// Builtin template: `basic`, `c5`, `c6`, `c16` or `c17`.
    #[new]
    fn new(kind: &str, n_qubits: usize, n_layers: usize) -> PyResult<Self> {
        CircuitTemplate::build(TemplateKind::parse(kind).py()?, n_qubits, n_layers).py().map(Self)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().name()
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.0.n_layers()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    /// `⟨σz⟩` per qubit after angle-encoding `x` and running the circuit.
    fn expectations(&self, params: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let input = EncodingSpec::angle(self.0.n_qubits(), Axis::X).encode(&x).py()?;
        self.0.bind(params).py()?.measure_all_z(&input).py()
    }

    /// Parameter-shift Jacobian, `[qubit][parameter]`.
    fn jacobian(&self, params: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let input = EncodingSpec::angle(self.0.n_qubits(), Axis::X).encode(&x).py()?;
        gradients::param_shift_jacobian(&self.0.bind(params).py()?, &input).py()
    }

    /// Expressibility and entangling capability as a JSON string.
    #[pyo3(signature = (samples=analysis::DEFAULT_SAMPLES, bins=analysis::DEFAULT_BINS, seed=0))]
    fn analyze(&self, py: Python<'_>, samples: usize, bins: usize, seed: u64) -> PyResult<String> {
        let t = &self.0;
        py.detach(|| analysis::analyze(t, samples, bins, seed)).py().map(|r| r.to_json())
    }

    fn __repr__(&self) -> String {
        format!("CircuitTemplate('{}', n_qubits={}, n_layers={})", self.kind(), self.n_qubits(), self.n_layers())
    }
}

#[pyclass(name = "Dataset", module = "pyqdefect", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (patterns, count, size=data::DEFAULT_SIZE, noise=0.05, seed=0))]
    fn generate(patterns: Vec<String>, count: usize, size: usize, noise: f64, seed: u64) -> PyResult<Self> {
        let mix = patterns.iter().map(|p| p.parse::<Pattern>()).collect::<qdefect::Result<Vec<_>>>().py()?;
        data::generate_dataset(&mix, count, size, noise, seed).py().map(Self)
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        data::Dataset::read(path).py().map(Self)
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.write(path).py()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.class_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.samples.iter().map(|s| s.label).collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.0.class_counts()
    }

    /// Row-major grid of sample `i` (0 off-wafer, 1 good, 2 defect).
    fn grid(&self, i: usize) -> PyResult<Vec<u8>> {
        let s = self.0.samples.get(i).ok_or_else(|| PyValueError::new_err(format!("sample {i} out of range")))?;
        Ok(s.grid().to_vec())
    }

    /// Stratified `(train, test)` split.
    #[pyo3(signature = (test_fraction=0.2, seed=0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = data::split(&self.0, test_fraction, seed).py()?;
        Ok((Self(a), Self(b)))
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} samples, {}x{}, classes={:?})", self.0.len(), self.0.height, self.0.width, self.0.class_names)
    }
}

#[pyclass(name = "Model", module = "pyqdefect", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(HybridModel);

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (height, width, n_classes, variant="hybrid", template="c5", qubits=4, layers=4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        height: usize,
        width: usize,
        n_classes: usize,
        variant: &str,
        template: &str,
        qubits: usize,
        layers: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            variant: Variant::parse(variant).py()?,
            template: TemplateKind::parse(template).py()?,
            n_qubits: qubits,
            n_layers: layers,
            seed,
            ..ModelConfig::new(height, width, n_classes)
        };
        HybridModel::new(cfg).py().map(Self)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        HybridModel::load_file(path).py().map(Self)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.save_file(path).py()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }

    /// `(classical, quantum, head)` parameter counts.
    fn param_counts(&self) -> (usize, usize, usize) {
        (self.0.classical_param_count(), self.0.quantum_param_count(), self.0.head_param_count())
    }

    fn predict_proba(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        dataset.0.samples.iter().map(|s| self.0.forward(s).py()).collect()
    }

    fn predict(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<Vec<usize>> {
        py.detach(|| self.0.predict(&dataset.0.samples)).py()
    }

    /// `(loss, accuracy, confusion)`; `confusion[true][predicted]`.
    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<(f64, f64, Vec<Vec<usize>>)> {
        let e = py.detach(|| self.0.evaluate(&dataset.0)).py()?;
        Ok((e.loss, e.accuracy, e.confusion))
    }

    /// Trains in place with Adam and a cosine schedule. Returns one
    /// `(epoch, loss, train_acc, test_acc)` tuple per epoch.
    #[pyo3(signature = (train, test=None, epochs=30, batch_size=4, lr=1e-3, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        train: &PyDataset,
        test: Option<&PyDataset>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64, Option<f64>)>> {
        let cfg = TrainConfig { epochs, batch_size, learning_rate: lr, seed, ..TrainConfig::default() };
        let model = &mut self.0;
        let record = py.detach(|| hybrid::train(model, &train.0, test.map(|t| &t.0), &cfg)).py()?;
        Ok(record.epochs.iter().map(|m| (m.epoch, m.loss, m.train_acc, m.test_acc)).collect())
    }

    fn __repr__(&self) -> String {
        let c = self.0.config();
        format!(
            "Model(variant='{}', template='{}', qubits={}, layers={}, classes={})",
            c.variant.name(),
            c.template.name(),
            c.n_qubits,
            c.n_layers,
            c.n_classes
        )
    }
}

#[pymodule]
fn pyqdefect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStatevector>()?;
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(basis_encode, m)?)?;
    m.add_function(wrap_pyfunction!(angle_encode, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude_encode, m)?)?;
    Ok(())
}
