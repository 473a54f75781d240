//! `key = value` run configuration. One pair per line, `#` starts a
//! comment, blank lines are ignored, unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use qdefect::circuits::{CircuitTemplate, TemplateKind};
use qdefect::encoders::Scheme;
use qdefect::hybrid::{Augment, LrSchedule, ModelConfig, OptimizerKind, TrainConfig, Variant};
use qdefect::nn::SelfProliferationConfig;
use qdefect::qstate::Axis;

pub const KEYS: &[&str] = &[
    "variant",
    "template",
    "qubits",
    "layers",
    "encoding",
    "axis",
    "stem_channels",
    "blocks",
    "proliferation_s",
    "proliferation_t",
    "attention_inner",
    "optimizer",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "eps",
    "schedule",
    "epochs",
    "batch_size",
    "augment",
    "seed",
    "test_fraction",
    "data",
    "out_model",
    "metrics",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Everything except the input size and class count, which come from
    /// the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub data: Option<PathBuf>,
    pub out_model: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::new(26, 26, 4),
            train: TrainConfig::default(),
            test_fraction: 0.2,
            data: None,
            out_model: None,
            metrics: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("{key}: cannot parse '{v}'"))
}

fn parse_augment(v: &str) -> Result<Augment> {
    let mut a = Augment::default();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "none" => {}
            "mirror" => a.mirror = true,
            "flip" => a.flip = true,
            "rotate90" => a.rotate90 = true,
            other => bail!("augment: unknown augmentation '{other}'"),
        }
    }
    Ok(a)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                bail!("line {}: unknown key '{k}'", i + 1);
            }
            if pairs.insert(k.to_owned(), v.to_owned()).is_some() {
                bail!("line {}: key '{k}' given twice", i + 1);
            }
        }

        let mut c = RunConfig::default();
        let (mut momentum, mut beta1, mut beta2, mut eps) = (0.9, 0.9, 0.999, 1e-8);
        let mut optimizer = "adam".to_owned();
        for (k, v) in &pairs {
            let m = &mut c.model;
            let t = &mut c.train;
            match k.as_str() {
                "variant" => m.variant = Variant::parse(v)?,
                "template" => m.template = TemplateKind::parse(v)?,
                "qubits" => m.n_qubits = num(k, v)?,
                "layers" => m.n_layers = num(k, v)?,
                "encoding" => m.scheme = Scheme::parse(v)?,
                "axis" => m.axis = Axis::parse(v)?,
                "stem_channels" => m.stem_channels = num(k, v)?,
                "blocks" => m.n_blocks = num(k, v)?,
                "proliferation_s" => m.proliferation.s = num(k, v)?,
                "proliferation_t" => m.proliferation.t = num(k, v)?,
                "attention_inner" => m.attention_inner = num(k, v)?,
                "optimizer" => optimizer = v.to_ascii_lowercase(),
                "lr" => t.learning_rate = num(k, v)?,
                "momentum" => momentum = num(k, v)?,
                "beta1" => beta1 = num(k, v)?,
                "beta2" => beta2 = num(k, v)?,
                "eps" => eps = num(k, v)?,
                "schedule" => t.schedule = LrSchedule::parse(v)?,
                "epochs" => t.epochs = num(k, v)?,
                "batch_size" => t.batch_size = num(k, v)?,
                "augment" => t.augment = parse_augment(v)?,
                "seed" => {
                    t.seed = num(k, v)?;
                    m.seed = t.seed;
                }
                "test_fraction" => c.test_fraction = num(k, v)?,
                "data" => c.data = Some(v.into()),
                "out_model" => c.out_model = Some(v.into()),
                "metrics" => c.metrics = Some(v.into()),
                _ => unreachable!("key list checked above"),
            }
        }
        c.train.optimizer = match optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "momentum" => OptimizerKind::Momentum { momentum },
            "adam" => OptimizerKind::Adam { beta1, beta2, eps },
            other => bail!("optimizer: unknown optimizer '{other}'"),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let SelfProliferationConfig { s, t, .. } = self.model.proliferation;
        if s == 0 || t == 0 {
            bail!("proliferation_s and proliferation_t must be positive");
        }
        if self.model.attention_inner == 0 || self.model.attention_inner >= s * t {
            bail!("attention_inner must be in 1..{} for s·t = {}", s * t, s * t);
        }
        if self.model.variant == Variant::Hybrid {
            CircuitTemplate::build(self.model.template, self.model.n_qubits, self.model.n_layers)?;
        }
        self.train.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("test_fraction must be in (0, 1)");
        }
        Ok(())
    }

    /// Model configuration for a dataset of the given shape.
    pub fn model_for(&self, height: usize, width: usize, n_classes: usize) -> ModelConfig {
        ModelConfig { height, width, n_classes, ..self.model.clone() }
    }
}
