//! End-to-end classifier: convolutional features → `tanh` → encoded
//! quantum circuit → `⟨σ_z⟩` per qubit → linear head → softmax.
//!
//! Classical layers are trained by backpropagation, circuit parameters by
//! parameter shift, and the two are chained through the input-angle
//! Jacobian of the circuit. The `Classical` variant drops the circuit and
//! feeds the `tanh` features straight into the head.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuits::{CircuitTemplate, TemplateKind};
use crate::data::{Dataset, WaferSample};
use crate::encoders::{EncodingSpec, Scheme};
use crate::error::{Error, Result};
use crate::gradients::{param_shift_jacobian, quantum_gradient};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu_backward, softmax, Conv2d, FeatureTensor, Linear, ParamRole,
    Params, SelfProliferationConfig, SpaBlock, SpaCache, SpaConfig, LOG_CLAMP,
};
use crate::qstate::{Axis, MAX_QUBITS};
use crate::stream_rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HQN1";
const CHECKPOINT_VERSION: u32 = 1;

/// Circuit parameters start uniform in `±QUANTUM_INIT_SCALE`, close to the
/// identity circuit.
pub const QUANTUM_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Hybrid,
    /// No quantum layer; the head reads the `tanh` features directly.
    Classical,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::Classical => "classical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Variant::Hybrid),
            "classical" => Ok(Variant::Classical),
            other => Err(Error::invalid(format!("unknown model variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub stem_channels: usize,
    pub n_blocks: usize,
    pub proliferation: SelfProliferationConfig,
    pub primary_kernel: usize,
    pub depthwise_kernel: usize,
    pub attention_inner: usize,
    pub n_qubits: usize,
    pub variant: Variant,
    pub template: TemplateKind,
    pub n_layers: usize,
    pub scheme: Scheme,
    pub axis: Axis,
    pub seed: u64,
}

impl ModelConfig {
    /// Default topology for `height × width` maps and `n_classes` labels.
    pub fn new(height: usize, width: usize, n_classes: usize) -> Self {
        ModelConfig {
            height,
            width,
            n_classes,
            stem_channels: 8,
            n_blocks: 1,
            proliferation: SelfProliferationConfig { s: 4, t: 2, cheap_kernel: 3 },
            primary_kernel: 3,
            depthwise_kernel: 3,
            attention_inner: 2,
            n_qubits: 4,
            variant: Variant::Hybrid,
            template: TemplateKind::C5,
            n_layers: 4,
            scheme: Scheme::Angle,
            axis: Axis::X,
            seed: 0,
        }
    }

    pub fn spa(&self) -> SpaConfig {
        SpaConfig {
            channels: self.stem_channels,
            proliferation: self.proliferation,
            primary_kernel: self.primary_kernel,
            depthwise_kernel: self.depthwise_kernel,
            attention_inner: self.attention_inner,
        }
    }

    pub fn encoding(&self) -> EncodingSpec {
        EncodingSpec { axis: self.axis, ..EncodingSpec::new(self.scheme, self.n_qubits) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("input dimensions must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        if self.stem_channels == 0 || self.n_blocks == 0 {
            return Err(Error::invalid("need a positive stem width and at least one block"));
        }
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return Err(Error::QubitCount(self.n_qubits));
        }
        if self.variant == Variant::Hybrid {
            if self.template == TemplateKind::Custom {
                return Err(Error::Unsupported("custom templates inside a model".into()));
            }
            if self.n_layers == 0 {
                return Err(Error::invalid("circuit needs at least one layer"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumLayer {
    pub encoding: EncodingSpec,
    pub template: CircuitTemplate,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    cfg: ModelConfig,
    pub stem: Conv2d,
    pub blocks: Vec<SpaBlock>,
    pub fc: Linear,
    pub quantum: Option<QuantumLayer>,
    pub head: Linear,
}

/// Parameters split into `(ω¹, b¹, θ, ω², b²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroups {
    pub classical_weights: Vec<f64>,
    pub classical_biases: Vec<f64>,
    pub theta: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

/// Loss gradient, laid out exactly like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(HybridModel);

impl Gradients {
    pub fn groups(&self) -> ParamGroups {
        self.0.groups()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.flatten()
    }
}

struct Trace {
    input: FeatureTensor,
    stem_raw: FeatureTensor,
    /// Input of every block, then the last block's output.
    acts: Vec<FeatureTensor>,
    caches: Vec<SpaCache>,
    pooled: Vec<f64>,
    features: Vec<f64>,
    measured: Vec<f64>,
    probs: Vec<f64>,
}

impl HybridModel {
    /// Freshly initialized model, seeded by `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let mut m = Self::zeroed(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(m.cfg.seed);
        m.stem = m.stem.init(&mut rng);
        m.blocks = m.blocks.into_iter().map(|b| b.init(&mut rng)).collect();
        m.fc = m.fc.init(&mut rng);
        if let Some(q) = &mut m.quantum {
            q.theta.iter_mut().for_each(|t| *t = rng.gen_range(-QUANTUM_INIT_SCALE..QUANTUM_INIT_SCALE));
        }
        m.head = m.head.init(&mut rng);
        Ok(m)
    }

    /// Model with every parameter at its structural default (zero weights,
    /// identity cheap transforms, unit layer-norm scale).
    fn zeroed(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv2d::new(cfg.stem_channels, 1, 3, 1, 1, true)?;
        let blocks = (0..cfg.n_blocks).map(|_| SpaBlock::new(cfg.spa())).collect::<Result<Vec<_>>>()?;
        let fc = Linear::new(cfg.n_qubits, cfg.stem_channels)?;
        let quantum = match cfg.variant {
            Variant::Classical => None,
            Variant::Hybrid => {
                let template = CircuitTemplate::build(cfg.template, cfg.n_qubits, cfg.n_layers)?;
                let theta = vec![0.0; template.param_count()];
                Some(QuantumLayer { encoding: cfg.encoding(), template, theta })
            }
        };
        let head = Linear::new(cfg.n_classes, cfg.n_qubits)?;
        Ok(HybridModel { cfg, stem, blocks, fc, quantum, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn n_classes(&self) -> usize {
        self.cfg.n_classes
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }

    /// Stem, blocks and the feature projection.
    pub fn classical_param_count(&self) -> usize {
        self.stem.param_count() + self.blocks.iter().map(Params::param_count).sum::<usize>() + self.fc.param_count()
    }

    pub fn quantum_param_count(&self) -> usize {
        self.quantum.as_ref().map_or(0, |q| q.theta.len())
    }

    pub fn head_param_count(&self) -> usize {
        self.head.param_count()
    }

    /// Whether the classical stage receives gradients. Only angle encoding
    /// is differentiable with respect to its input.
    pub fn classical_trainable(&self) -> bool {
        self.quantum.as_ref().is_none_or(|q| q.encoding.scheme == Scheme::Angle)
    }

    fn visit_classical(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        self.stem.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.fc.visit(f);
    }

    pub fn groups(&self) -> ParamGroups {
        let mut g = ParamGroups {
            classical_weights: Vec::new(),
            classical_biases: Vec::new(),
            theta: self.quantum.as_ref().map_or_else(Vec::new, |q| q.theta.clone()),
            head_weights: self.head.weight.clone(),
            head_bias: self.head.bias.clone(),
        };
        self.visit_classical(&mut |role, p| match role {
            ParamRole::Weight => g.classical_weights.extend_from_slice(p),
            ParamRole::Bias => g.classical_biases.extend_from_slice(p),
        });
        g
    }

    fn check_sample(&self, s: &WaferSample) -> Result<()> {
        if (s.height(), s.width()) != (self.cfg.height, self.cfg.width) {
            return Err(Error::dim(format!(
                "{}×{} sample for a model built on {}×{} maps",
                s.height(),
                s.width(),
                self.cfg.height,
                self.cfg.width
            )));
        }
        Ok(())
    }

    fn trace(&self, s: &WaferSample) -> Result<Trace> {
        self.check_sample(s)?;
        let input = s.to_tensor();
        let stem_raw = self.stem.forward(&input)?;
        let mut acts = vec![stem_raw.map(|v| v.max(0.0))];
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(acts.last().expect("non-empty"))?;
            acts.push(y);
            caches.push(c);
        }
        let pooled = global_avg_pool(acts.last().expect("non-empty"));
        let features: Vec<f64> = self.fc.forward(&pooled)?.iter().map(|v| v.tanh()).collect();
        let measured = match &self.quantum {
            None => features.clone(),
            Some(q) => {
                let state = q.encoding.encode(&features)?;
                q.template.bind(q.theta.clone())?.measure_all_z(&state)?
            }
        };
        let probs = softmax(&self.head.forward(&measured)?)?;
        Ok(Trace { input, stem_raw, acts, caches, pooled, features, measured, probs })
    }

    /// Class probabilities for one wafer map.
    pub fn forward(&self, s: &WaferSample) -> Result<Vec<f64>> {
        Ok(self.trace(s)?.probs)
    }

    /// `tanh` features fed to the encoder.
    pub fn features(&self, s: &WaferSample) -> Result<Vec<f64>> {
        Ok(self.trace(s)?.features)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.cfg.n_classes {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", self.cfg.n_classes)));
        }
        Ok(())
    }

    /// `−log p_label` and its gradient scaled by `weight`, flattened.
    fn sample_grads(&self, s: &WaferSample, weight: f64) -> Result<(f64, Vec<f64>)> {
        self.check_label(s.label)?;
        let t = self.trace(s)?;
        let loss = -t.probs[s.label].max(LOG_CLAMP).ln();
        let mut g = self.zeros_like();

        let d_logits: Vec<f64> = t
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| weight * (p - if k == s.label { 1.0 } else { 0.0 }))
            .collect();
        let d_measured = self.head.backward(&t.measured, &d_logits, &mut g.head);

        let d_features = match &self.quantum {
            None => Some(d_measured),
            Some(q) => {
                let circuit = q.template.bind(q.theta.clone())?;
                let (jac_theta, jac_x) = if q.encoding.scheme == Scheme::Angle {
                    let qg = quantum_gradient(&circuit, &t.features, &q.encoding)?;
                    (qg.params, Some(qg.inputs))
                } else {
                    (param_shift_jacobian(&circuit, &q.encoding.encode(&t.features)?)?, None)
                };
                let gq = &mut g.quantum.as_mut().expect("same layout").theta;
                for (row, dm) in jac_theta.iter().zip(&d_measured) {
                    for (gt, j) in gq.iter_mut().zip(row) {
                        *gt += dm * j;
                    }
                }
                jac_x.map(|jx| {
                    let mut df = vec![0.0; t.features.len()];
                    for (row, dm) in jx.iter().zip(&d_measured) {
                        for (d, j) in df.iter_mut().zip(row) {
                            *d += dm * j;
                        }
                    }
                    df
                })
            }
        };

        if let Some(df) = d_features {
            let dz: Vec<f64> = df.iter().zip(&t.features).map(|(d, f)| d * (1.0 - f * f)).collect();
            let d_pooled = self.fc.backward(&t.pooled, &dz, &mut g.fc);
            let last = t.acts.last().expect("non-empty");
            let mut d = global_avg_pool_backward(&d_pooled, last.height(), last.width());
            for (i, b) in self.blocks.iter().enumerate().rev() {
                d = b.backward(&t.acts[i], &t.caches[i], &d, &mut g.blocks[i])?;
            }
            let (c, h, w) = t.stem_raw.shape();
            let d_raw = FeatureTensor::new(c, h, w, relu_backward(t.stem_raw.data(), d.data()))?;
            self.stem.backward(&t.input, &d_raw, &mut g.stem)?;
        }
        Ok((loss, g.flatten()))
    }

    /// Mean cross-entropy over `batch` and its gradient for all five
    /// parameter groups.
    pub fn loss_and_grads(&self, batch: &[WaferSample]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let weight = 1.0 / batch.len() as f64;
        let per_sample = batch.par_iter().map(|s| self.sample_grads(s, weight)).collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut flat = vec![0.0; self.param_count()];
        for (l, g) in &per_sample {
            loss += l;
            for (a, b) in flat.iter_mut().zip(g) {
                *a += b;
            }
        }
        let mut g = self.zeros_like();
        g.load(&flat)?;
        Ok((loss * weight, Gradients(g)))
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, batch: &[WaferSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let losses = batch
            .par_iter()
            .map(|s| {
                self.check_label(s.label)?;
                Ok(-self.forward(s)?[s.label].max(LOG_CLAMP).ln())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / batch.len() as f64)
    }

    pub fn predict(&self, samples: &[WaferSample]) -> Result<Vec<usize>> {
        samples.par_iter().map(|s| Ok(argmax(&self.forward(s)?))).collect()
    }

    pub fn evaluate(&self, dataset: &Dataset) -> Result<Evaluation> {
        self.check_dataset(dataset)?;
        if dataset.is_empty() {
            return Err(Error::invalid("evaluation on an empty dataset"));
        }
        let probs = dataset.samples.par_iter().map(|s| self.forward(s)).collect::<Result<Vec<_>>>()?;
        let k = self.cfg.n_classes;
        let mut confusion = vec![vec![0usize; k]; k];
        let mut loss = 0.0;
        for (p, s) in probs.iter().zip(&dataset.samples) {
            confusion[s.label][argmax(p)] += 1;
            loss -= p[s.label].max(LOG_CLAMP).ln();
        }
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        Ok(Evaluation {
            loss: loss / dataset.len() as f64,
            accuracy: correct as f64 / dataset.len() as f64,
            confusion,
        })
    }

    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        if (d.height, d.width) != (self.cfg.height, self.cfg.width) {
            return Err(Error::dim(format!(
                "{}×{} dataset for a model built on {}×{} maps",
                d.height, d.width, self.cfg.height, self.cfg.width
            )));
        }
        if d.n_classes() != self.cfg.n_classes {
            return Err(Error::dim(format!(
                "{} dataset classes for a {}-class model",
                d.n_classes(),
                self.cfg.n_classes
            )));
        }
        Ok(())
    }
}

impl Params for HybridModel {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        self.visit_classical(f);
        if let Some(q) = &self.quantum {
            f(ParamRole::Weight, &q.theta);
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        self.stem.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.fc.visit_mut(f);
        if let Some(q) = &mut self.quantum {
            f(ParamRole::Weight, &mut q.theta);
        }
        self.head.visit_mut(f);
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn forward(model: &HybridModel, sample: &WaferSample) -> Result<Vec<f64>> {
    model.forward(sample)
}

pub fn loss_and_grads(model: &HybridModel, batch: &[WaferSample]) -> Result<(f64, Gradients)> {
    model.loss_and_grads(batch)
}

pub fn predict(model: &HybridModel, samples: &[WaferSample]) -> Result<Vec<usize>> {
    model.predict(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub mirror: bool,
    pub flip: bool,
    pub rotate90: bool,
}

impl Augment {
    pub fn any(&self) -> bool {
        self.mirror || self.flip || self.rotate90
    }

    fn apply(&self, s: &WaferSample, rng: &mut impl Rng) -> WaferSample {
        let mut out = s.clone();
        if self.mirror && rng.gen_bool(0.5) {
            out = out.mirrored();
        }
        if self.flip && rng.gen_bool(0.5) {
            out = out.flipped();
        }
        if self.rotate90 {
            let k = if out.height() == out.width() { rng.gen_range(0..4) } else { 2 * rng.gen_range(0..2) };
            out = out.rotated90(k).expect("turn count matches shape");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// `lr · ½(1 + cos(π · step / total_steps))`.
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::invalid(format!("unknown learning-rate schedule '{other}'"))),
        }
    }

    fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            schedule: LrSchedule::Cosine,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            augment: Augment::default(),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the model untouched.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        match self.optimizer {
            OptimizerKind::Sgd => {}
            OptimizerKind::Momentum { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::invalid(format!("momentum {momentum} outside [0, 1)")));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::invalid("Adam needs β₁, β₂ in [0, 1) and ε > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer with its running moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer { kind, lr, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Momentum { momentum } => {
                for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    *m = momentum * *m + g;
                    *p -= self.lr * *m;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the un-augmented training set after the epoch.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epochs: Vec<EpochMetrics>,
    pub final_params: Vec<f64>,
}

const SHUFFLE_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1 << 32;

/// Mini-batch training. `model` is updated in place; metrics for each epoch
/// are passed to `on_epoch` as soon as they are known.
pub fn train_with(
    model: &mut HybridModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainRecord> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    model.check_dataset(train_set)?;
    if let Some(t) = test_set {
        model.check_dataset(t)?;
        if t.is_empty() {
            return Err(Error::invalid("empty test set"));
        }
    }
    let mut params = model.flatten();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * train_set.len().div_ceil(cfg.batch_size);
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut aug_rng = stream_rng(cfg.seed, AUGMENT_STREAM + epoch as u64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<WaferSample> = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set.samples[i];
                    if cfg.augment.any() {
                        cfg.augment.apply(s, &mut aug_rng)
                    } else {
                        s.clone()
                    }
                })
                .collect();
            let (_, g) = model.loss_and_grads(&batch)?;
            opt.set_learning_rate(cfg.learning_rate * cfg.schedule.factor(step, total_steps));
            step += 1;
            opt.step(&mut params, &g.flatten());
            model.load(&params)?;
        }
        let eval = model.evaluate(train_set)?;
        let test_acc = test_set.map(|t| model.evaluate(t).map(|e| e.accuracy)).transpose()?;
        let m = EpochMetrics { epoch, loss: eval.loss, train_acc: eval.accuracy, test_acc };
        on_epoch(&m);
        epochs.push(m);
    }
    Ok(TrainRecord { epochs, final_params: params })
}

pub fn train(
    model: &mut HybridModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainRecord> {
    train_with(model, train_set, test_set, cfg, |_| {})
}

// ---------------------------------------------------------------------------
// HQN1 checkpoints
//
// magic "HQN1", u32 version, then the configuration as u32/u64 fields and
// length-prefixed names, then a u32 array count and, per array, a
// length-prefixed name, a u64 length and that many f64 values. All integers
// and floats are little-endian.

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("checkpoint truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint string is not UTF-8"))
    }
}

const ARRAY_NAMES: [&str; 3] = ["classical", "theta", "head"];

impl HybridModel {
    fn arrays(&self) -> [Vec<f64>; 3] {
        let mut classical = Vec::new();
        self.visit_classical(&mut |_, p| classical.extend_from_slice(p));
        let theta = self.quantum.as_ref().map_or_else(Vec::new, |q| q.theta.clone());
        [classical, theta, self.head.flatten()]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.cfg;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        for v in [
            c.height,
            c.width,
            c.n_classes,
            c.stem_channels,
            c.n_blocks,
            c.proliferation.s,
            c.proliferation.t,
            c.proliferation.cheap_kernel,
            c.primary_kernel,
            c.depthwise_kernel,
            c.attention_inner,
            c.n_qubits,
            c.n_layers,
        ] {
            put_u32(&mut out, v);
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        put_str(&mut out, c.variant.name());
        put_str(&mut out, c.template.name());
        put_str(&mut out, c.scheme.name());
        put_str(&mut out, c.axis.name());
        put_u32(&mut out, ARRAY_NAMES.len());
        for (name, values) in ARRAY_NAMES.iter().zip(self.arrays()) {
            put_str(&mut out, name);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("bad magic, expected HQN1"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 13];
        for d in &mut dims {
            *d = r.u32()?;
        }
        let seed = r.u64()?;
        let parse = |e: Error| Error::format(e.to_string());
        let variant = Variant::parse(&r.string()?).map_err(parse)?;
        let template = TemplateKind::parse(&r.string()?).map_err(parse)?;
        let scheme = Scheme::parse(&r.string()?).map_err(parse)?;
        let axis = Axis::parse(&r.string()?).map_err(parse)?;
        let cfg = ModelConfig {
            height: dims[0],
            width: dims[1],
            n_classes: dims[2],
            stem_channels: dims[3],
            n_blocks: dims[4],
            proliferation: SelfProliferationConfig { s: dims[5], t: dims[6], cheap_kernel: dims[7] },
            primary_kernel: dims[8],
            depthwise_kernel: dims[9],
            attention_inner: dims[10],
            n_qubits: dims[11],
            n_layers: dims[12],
            variant,
            template,
            scheme,
            axis,
            seed,
        };
        let mut model = Self::zeroed(cfg).map_err(parse)?;
        let expected = model.arrays();

        if r.u32()? != ARRAY_NAMES.len() {
            return Err(Error::format("unexpected parameter array count"));
        }
        let mut flat = Vec::with_capacity(model.param_count());
        for (name, want) in ARRAY_NAMES.iter().zip(&expected) {
            let got = r.string()?;
            if got != *name {
                return Err(Error::format(format!("expected array '{name}', found '{got}'")));
            }
            let len = r.u64()?;
            if len != want.len() as u64 {
                return Err(Error::format(format!("array '{name}' has {len} values, model needs {}", want.len())));
            }
            for _ in 0..len {
                let v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                if !v.is_finite() {
                    return Err(Error::format(format!("non-finite value in array '{name}'")));
                }
                flat.push(v);
            }
        }
        if r.pos != buf.len() {
            return Err(Error::format("trailing bytes after checkpoint"));
        }
        model.load(&flat)?;
        Ok(model)
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load_from(r: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, generate_dataset, Pattern};
    use crate::nn::gradcheck::rel_err;

    /// 6×6 maps, 2 qubits, C16.
    pub(crate) fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            stem_channels: 2,
            proliferation: SelfProliferationConfig { s: 2, t: 2, cheap_kernel: 3 },
            attention_inner: 2,
            n_qubits: 2,
            template: TemplateKind::C16,
            n_layers: 1,
            seed,
            ..ModelConfig::new(6, 6, 3)
        }
    }

    fn tiny_sample(label: usize, seed: u64) -> WaferSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = crate::data::wafer_mask(6, 6);
        let grid = mask.iter().map(|&on| if on { rng.gen_range(1..=2) } else { 0 }).collect();
        WaferSample::new(6, 6, grid, label).unwrap()
    }

    fn randomized(cfg: ModelConfig, seed: u64) -> HybridModel {
        let mut m = HybridModel::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..m.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        m.load(&vals).unwrap();
        m
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = HybridModel::new(ModelConfig::new(12, 12, 4)).unwrap();
        for (i, p) in Pattern::ALL.iter().enumerate() {
            let s = generate(*p, 12, 12, 0.05, i as u64).unwrap();
            let probs = m.forward(&s).unwrap();
            assert_eq!(probs.len(), 4);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(probs.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut m = HybridModel::new(ModelConfig::new(12, 12, 4)).unwrap();
        m.head.fill_zero();
        let s = generate(Pattern::Ring, 12, 12, 0.0, 0).unwrap();
        for p in m.forward(&s).unwrap() {
            assert!((p - 0.25).abs() <= 1e-15);
        }
    }

    #[test]
    fn deterministic_forward() {
        let a = HybridModel::new(ModelConfig { seed: 5, ..ModelConfig::new(12, 12, 4) }).unwrap();
        let b = HybridModel::new(ModelConfig { seed: 5, ..ModelConfig::new(12, 12, 4) }).unwrap();
        let s = generate(Pattern::Scratch, 12, 12, 0.05, 1).unwrap();
        let (pa, pb) = (a.forward(&s).unwrap(), b.forward(&s).unwrap());
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn dimension_and_label_errors() {
        let m = HybridModel::new(ModelConfig::new(12, 12, 4)).unwrap();
        let wrong = generate(Pattern::Ring, 14, 14, 0.0, 0).unwrap();
        assert!(matches!(m.forward(&wrong), Err(Error::Dimension(_))));
        let mut s = generate(Pattern::Ring, 12, 12, 0.0, 0).unwrap();
        s.label = 4;
        assert!(m.loss_and_grads(&[s]).is_err());
        assert!(m.loss_and_grads(&[]).is_err());
    }

    #[test]
    fn parameter_counts() {
        let m = HybridModel::new(ModelConfig::new(12, 12, 4)).unwrap();
        assert_eq!(m.quantum_param_count(), 4 * (4 * 4 + 4 * 3));
        assert_eq!(m.head_param_count(), 4 * 4 + 4);
        // stem 8·9+8, primary 4·8·9+4, cheap 4·9, depthwise 8·9,
        // attention 8 + 2·8 + 2 + 2 + 8·2, compress 8·8+8, fc 4·8+4
        let classical = 80 + 292 + 36 + 72 + 44 + 72 + 36;
        assert_eq!(m.classical_param_count(), classical);
        assert_eq!(m.param_count(), classical + 112 + 20);
        let g = m.groups();
        assert_eq!(g.classical_weights.len() + g.classical_biases.len(), classical);
        let c = HybridModel::new(ModelConfig { variant: Variant::Classical, ..ModelConfig::new(12, 12, 4) }).unwrap();
        assert_eq!(c.quantum_param_count(), 0);
        assert_eq!(c.classical_param_count(), classical);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_difference() {
        let m = randomized(tiny_config(0), 1);
        let batch = vec![tiny_sample(0, 2), tiny_sample(2, 3)];
        let (_, g) = m.loss_and_grads(&batch).unwrap();
        let analytic = g.flatten();
        let base = m.flatten();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..base.len())
            .map(|j| {
                let mut p = base.clone();
                p[j] = base[j] + h;
                let mut mp = m.clone();
                mp.load(&p).unwrap();
                let plus = mp.loss(&batch).unwrap();
                p[j] = base[j] - h;
                mp.load(&p).unwrap();
                (plus - mp.loss(&batch).unwrap()) / (2.0 * h)
            })
            .collect();
        let e = rel_err(&analytic, &numeric);
        assert!(e <= 1e-5, "relative error {e}");
        assert!(analytic.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn classical_variant_gradient() {
        let m = randomized(ModelConfig { variant: Variant::Classical, ..tiny_config(0) }, 4);
        let batch = vec![tiny_sample(1, 5)];
        let analytic = m.loss_and_grads(&batch).unwrap().1.flatten();
        let base = m.flatten();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..base.len())
            .map(|j| {
                let mut mp = m.clone();
                let mut p = base.clone();
                p[j] += h;
                mp.load(&p).unwrap();
                let plus = mp.loss(&batch).unwrap();
                p[j] -= 2.0 * h;
                mp.load(&p).unwrap();
                (plus - mp.loss(&batch).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&analytic, &numeric) <= 1e-5);
    }

    #[test]
    fn confident_truth_has_no_gradient() {
        let mut m = HybridModel::new(tiny_config(1)).unwrap();
        m.head.weight.fill(0.0);
        m.head.bias = vec![60.0, 0.0, 0.0];
        let (loss, g) = m.loss_and_grads(&[tiny_sample(0, 1), tiny_sample(0, 2)]).unwrap();
        assert!(loss <= 1e-20);
        assert!(g.flatten().iter().all(|v| v.abs() <= 1e-20));
    }

    #[test]
    fn non_angle_encoding_freezes_classical_part() {
        for scheme in [Scheme::Basis, Scheme::Amplitude] {
            let m = randomized(ModelConfig { scheme, ..tiny_config(0) }, 7);
            assert!(!m.classical_trainable());
            let g = m.loss_and_grads(&[tiny_sample(1, 3)]).unwrap().1.groups();
            assert!(g.classical_weights.iter().chain(&g.classical_biases).all(|&v| v == 0.0));
            assert!(g.head_weights.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn memorizes_two_samples() {
        let mut m = HybridModel::new(tiny_config(3)).unwrap();
        let batch = vec![tiny_sample(0, 10), tiny_sample(1, 11)];
        let first = m.loss(&batch).unwrap();
        let mut params = m.flatten();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, params.len());
        for _ in 0..50 {
            let (_, g) = m.loss_and_grads(&batch).unwrap();
            opt.step(&mut params, &g.flatten());
            m.load(&params).unwrap();
        }
        let last = m.loss(&batch).unwrap();
        assert!(last < first, "{first} → {last}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let d = generate_dataset(&[Pattern::Center, Pattern::Ring], 8, 10, 0.05, 0).unwrap();
        let cfg = ModelConfig { n_classes: 2, ..tiny_config(2) };
        let mut m = HybridModel::new(ModelConfig { height: 10, width: 10, ..cfg }).unwrap();
        let before = m.clone();
        let tc = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 0.0, ..TrainConfig::default() };
        let rec = train(&mut m, &d, None, &tc).unwrap();
        assert_eq!(m, before);
        assert_eq!(rec.final_params, before.flatten());
        assert!(rec.epochs.iter().all(|e| e.loss == rec.epochs[0].loss));
    }

    #[test]
    fn separable_two_class_task() {
        let d = generate_dataset(&[Pattern::None, Pattern::Center], 50, 12, 0.02, 4).unwrap();
        let mut m = HybridModel::new(ModelConfig { seed: 1, ..ModelConfig::new(12, 12, 2) }).unwrap();
        let tc = TrainConfig { epochs: 20, learning_rate: 0.01, ..TrainConfig::default() };
        let rec = train(&mut m, &d, None, &tc).unwrap();
        let best = rec.epochs.iter().map(|e| e.train_acc).fold(0.0, f64::max);
        assert!(best >= 0.95, "train accuracy {:?}", rec.epochs.iter().map(|e| e.train_acc).collect::<Vec<_>>());
    }

    #[test]
    fn rotation_augmented_model_is_rotation_stable() {
        let d = generate_dataset(&[Pattern::Center, Pattern::Edge, Pattern::Scratch], 36, 12, 0.02, 8).unwrap();
        let mut m = HybridModel::new(ModelConfig { seed: 2, ..ModelConfig::new(12, 12, 3) }).unwrap();
        let augment = Augment { rotate90: true, ..Augment::default() };
        let tc = TrainConfig { epochs: 8, learning_rate: 0.01, augment, ..TrainConfig::default() };
        train(&mut m, &d, None, &tc).unwrap();
        let mut same = 0;
        let mut total = 0;
        for seed in 100..120 {
            let s = generate(Pattern::Center, 12, 12, 0.05, seed).unwrap();
            let base = argmax(&m.forward(&s).unwrap());
            for k in 1..4 {
                total += 1;
                same += usize::from(argmax(&m.forward(&s.rotated90(k).unwrap()).unwrap()) == base);
            }
        }
        assert!(same as f64 >= 0.9 * total as f64, "{same}/{total}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Cosine.factor(0, 10), 1.0);
        assert!(LrSchedule::Cosine.factor(10, 10).abs() < 1e-15);
        assert!((LrSchedule::Cosine.factor(5, 10) - 0.5).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.factor(7, 10), 1.0);
    }

    #[test]
    fn argmax_ties_and_scaling() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let logits = [0.3, -1.0, 2.5, 2.4];
        let a = argmax(&softmax(&logits).unwrap());
        let scaled: Vec<f64> = logits.iter().map(|v| 3.0 * v + 1.0).collect();
        assert_eq!(argmax(&softmax(&scaled).unwrap()), a);
        let cubed: Vec<f64> = logits.iter().map(|v| v * v * v).collect();
        assert_eq!(argmax(&softmax(&cubed).unwrap()), a);
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let m = randomized(tiny_config(0), 9);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"HQN1");
        assert_eq!(HybridModel::from_bytes(&bytes).unwrap(), m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(HybridModel::from_bytes(&bad), Err(Error::Format(_))));
        assert!(HybridModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(HybridModel::from_bytes(&extra).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(HybridModel::from_bytes(&nan).is_err());
        // attention bottleneck equal to its width violates the block invariant
        let mut inner = bytes.clone();
        inner[8 + 10 * 4..8 + 11 * 4].copy_from_slice(&4u32.to_le_bytes());
        assert!(HybridModel::from_bytes(&inner).is_err());

        let c = HybridModel::new(ModelConfig { variant: Variant::Classical, ..tiny_config(1) }).unwrap();
        assert_eq!(HybridModel::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn config_errors() {
        assert!(HybridModel::new(ModelConfig { n_classes: 1, ..tiny_config(0) }).is_err());
        assert!(HybridModel::new(ModelConfig { template: TemplateKind::Custom, ..tiny_config(0) }).is_err());
        assert!(HybridModel::new(ModelConfig { n_blocks: 0, ..tiny_config(0) }).is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
