use std::fmt::Write as _;
use std::path::Path;

use crate::error::{FcplError, Result};
use crate::losses::{Reduction, DEFAULT_MARGIN, DEFAULT_SCALE};

/// Hyper-parameters for all three training stages. The on-disk form is a
/// flat `key=value` file using exactly these field names.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_r: f64,
    pub lambda_pn: f64,
    pub cosface_s: f64,
    pub cosface_m: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs for base and compatible training.
    pub epochs: usize,
    /// Epochs for ground-truth fine-tuning.
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub num_models: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Reduction for the compatibility and pair terms.
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_r: 1.0,
            lambda_pn: 0.5,
            cosface_s: DEFAULT_SCALE,
            cosface_m: DEFAULT_MARGIN,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            finetune_epochs: 5,
            batch_size: 32,
            seed: 0,
            num_models: 3,
            hidden_dim: 128,
            embed_dim: 32,
            reduction: Reduction::Sum,
        }
    }
}

const KEYS: [&str; 14] = [
    "lambda_r",
    "lambda_pn",
    "cosface_s",
    "cosface_m",
    "learning_rate",
    "momentum",
    "epochs",
    "finetune_epochs",
    "batch_size",
    "seed",
    "num_models",
    "hidden_dim",
    "embed_dim",
    "reduction",
];

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FcplError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            FcplError::Config(msg) => FcplError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parse `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FcplError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(FcplError::Config(format!("unknown key `{key}`")));
            }
            if !seen.insert(key.to_string()) {
                return Err(FcplError::Config(format!("duplicate key `{key}`")));
            }
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| FcplError::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "lambda_r" => self.lambda_r = num(key, value)?,
            "lambda_pn" => self.lambda_pn = num(key, value)?,
            "cosface_s" => self.cosface_s = num(key, value)?,
            "cosface_m" => self.cosface_m = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "finetune_epochs" => self.finetune_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "num_models" => self.num_models = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "reduction" => {
                self.reduction = match value {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(FcplError::Config(format!("reduction must be sum or mean, got `{value}`"))),
                }
            }
            _ => unreachable!("key checked against KEYS"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(FcplError::Config(msg));
        for (name, v) in [("lambda_r", self.lambda_r), ("lambda_pn", self.lambda_pn)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.cosface_s > 0.0 && self.cosface_s.is_finite()) {
            return fail(format!("cosface_s must be > 0, got {}", self.cosface_s));
        }
        if !(0.0..1.0).contains(&self.cosface_m) {
            return fail(format!("cosface_m must lie in [0, 1), got {}", self.cosface_m));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 4 {
            return fail(format!("batch_size must be >= 4, got {}", self.batch_size));
        }
        if self.num_models == 0 {
            return fail("num_models must be >= 1".into());
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return fail("hidden_dim and embed_dim must be positive".into());
        }
        if self.embed_dim > 512 {
            return fail(format!("embed_dim {} exceeds 512", self.embed_dim));
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let reduction = match self.reduction {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        };
        for (k, v) in [
            ("lambda_r", self.lambda_r.to_string()),
            ("lambda_pn", self.lambda_pn.to_string()),
            ("cosface_s", self.cosface_s.to_string()),
            ("cosface_m", self.cosface_m.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("epochs", self.epochs.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("num_models", self.num_models.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("reduction", reduction.to_string()),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }
}
