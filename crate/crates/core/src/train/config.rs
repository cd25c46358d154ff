use std::collections::BTreeMap;

use crate::data::DEFAULT_SIGMA;
use crate::error::{Error, Result};
use crate::model::config::{DEFAULT_DROPOUT, DEFAULT_EXPERTS};
use crate::model::{ExpertNetConfig, GatingNetConfig, StackConfig, Variant};
use crate::tensor::Precision;
use crate::train::adam::AdamConfig;

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_EPOCHS: usize = 30;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub k: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub crops_per_image: usize,
    pub sigma: f64,
    pub expert: ExpertNetConfig,
    pub gate: GatingNetConfig,
    pub expert_opt: AdamConfig,
    pub gate_opt: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            variant: Variant::Moc,
            k: DEFAULT_EXPERTS,
            lambda: DEFAULT_LAMBDA,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            precision: Precision::Standard,
            crops_per_image: crate::data::MALL_CROPS,
            sigma: DEFAULT_SIGMA,
            expert: ExpertNetConfig::default(),
            gate: GatingNetConfig {
                dropout: DEFAULT_DROPOUT,
                ..GatingNetConfig::default()
            },
            expert_opt: AdamConfig::default(),
            gate_opt: AdamConfig::default(),
        }
    }
}

fn stack_keys(prefix: &str, s: &StackConfig, out: &mut Vec<(String, String)>) {
    for (i, c) in s.conv.iter().enumerate() {
        out.push((format!("{prefix}.conv{}.filters", i + 1), c.filters.to_string()));
        out.push((format!("{prefix}.conv{}.kernel", i + 1), c.kernel.to_string()));
    }
    for (i, p) in s.pools.iter().enumerate() {
        out.push((format!("{prefix}.pool{}", i + 1), p.to_string()));
    }
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!(
                "lambda must be a finite value >= 0, got {}",
                self.lambda
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.crops_per_image == 0 {
            return Err(Error::config("crops per image must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.variant == Variant::Ordinary && self.k != 1 {
            return Err(Error::config("the ordinary CNN has exactly one expert (k = 1)"));
        }
        self.expert.stack.output_shape()?;
        self.gate.validate()?;
        self.expert_opt.validate()?;
        self.gate_opt.validate()
    }

    /// Patch side length shared by experts and gate.
    pub fn patch_size(&self) -> usize {
        self.expert.stack.input_size
    }

    /// `key=value` pairs in a fixed order; [`TrainingConfig::from_pairs`] inverts it exactly.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("variant".into(), self.variant.name().into()),
            ("k".into(), self.k.to_string()),
            ("lambda".into(), real(self.lambda)),
            ("epochs".into(), self.epochs.to_string()),
            ("batch".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("precision".into(), self.precision.name().into()),
            ("crops".into(), self.crops_per_image.to_string()),
            ("sigma".into(), real(self.sigma)),
            ("input.size".into(), self.expert.stack.input_size.to_string()),
            ("input.channels".into(), self.expert.stack.input_channels.to_string()),
            ("elu.alpha".into(), real(self.expert.stack.elu_alpha)),
        ];
        stack_keys("expert", &self.expert.stack, &mut out);
        stack_keys("gate", &self.gate.stack, &mut out);
        out.push(("gate.hidden".into(), self.gate.hidden.to_string()));
        out.push(("gate.dropout".into(), real(self.gate.dropout)));
        out.push(("adam.expert.lr".into(), real(self.expert_opt.lr)));
        out.push(("adam.gate.lr".into(), real(self.gate_opt.lr)));
        out.push(("adam.beta1".into(), real(self.expert_opt.beta1)));
        out.push(("adam.beta2".into(), real(self.expert_opt.beta2)));
        out.push(("adam.eps".into(), real(self.expert_opt.eps)));
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Sets one key. Unknown keys and unparsable values are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::config(format!("invalid value {value:?} for {key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let float = || value.parse::<f64>().map_err(|_| bad());
        let stack_field = |stack: &mut StackConfig, field: &str| -> Result<bool> {
            match field {
                "conv1.filters" => stack.conv[0].filters = int()?,
                "conv1.kernel" => stack.conv[0].kernel = int()?,
                "conv2.filters" => stack.conv[1].filters = int()?,
                "conv2.kernel" => stack.conv[1].kernel = int()?,
                "pool1" => stack.pools[0] = int()?,
                "pool2" => stack.pools[1] = int()?,
                _ => return Ok(false),
            }
            Ok(true)
        };
        match key {
            "variant" => self.variant = Variant::parse(value)?,
            "k" => self.k = int()?,
            "lambda" => self.lambda = float()?,
            "epochs" => self.epochs = int()?,
            "batch" => self.batch_size = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "precision" => self.precision = Precision::parse(value).ok_or_else(bad)?,
            "crops" => self.crops_per_image = int()?,
            "sigma" => self.sigma = float()?,
            "input.size" => {
                let v = int()?;
                self.expert.stack.input_size = v;
                self.gate.stack.input_size = v;
            }
            "input.channels" => {
                let v = int()?;
                self.expert.stack.input_channels = v;
                self.gate.stack.input_channels = v;
            }
            "elu.alpha" => {
                let v = float()?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(bad());
                }
                self.expert.stack.elu_alpha = v;
                self.gate.stack.elu_alpha = v;
            }
            "gate.hidden" => self.gate.hidden = int()?,
            "gate.dropout" => self.gate.dropout = float()?,
            "adam.expert.lr" => self.expert_opt.lr = float()?,
            "adam.gate.lr" => self.gate_opt.lr = float()?,
            "adam.beta1" => {
                self.expert_opt.beta1 = float()?;
                self.gate_opt.beta1 = self.expert_opt.beta1;
            }
            "adam.beta2" => {
                self.expert_opt.beta2 = float()?;
                self.gate_opt.beta2 = self.expert_opt.beta2;
            }
            "adam.eps" => {
                self.expert_opt.eps = float()?;
                self.gate_opt.eps = self.expert_opt.eps;
            }
            other => {
                let handled = match other.split_once('.') {
                    Some(("expert", field)) => stack_field(&mut self.expert.stack, field)?,
                    Some(("gate", field)) => stack_field(&mut self.gate.stack, field)?,
                    _ => false,
                };
                if !handled {
                    return Err(Error::config(format!("unknown config key {other:?}")));
                }
            }
        }
        Ok(())
    }

    /// Defaults overridden by `pairs`, in order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str, context: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            context: format!("{context}, line {}", i + 1),
            message: format!("expected key=value, got {line:?}"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
