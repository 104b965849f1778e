use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::Level;
use crate::error::{Error, Result};
use crate::eval::{CacheConfig, EvalOptions};
use crate::model::{DropoutSpec, ModelConfig, RegularizationSpec, DEFAULT_LAMBDA_PDR};
use crate::optim::OptimizerConfig;

/// Everything a run depends on. Parsed from flat `key = value` text;
/// [`RunConfig::to_text`] renders every key and parses back to an equal
/// value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: Option<PathBuf>,
    pub level: Level,
    /// Word level only: rarer words map to `<unk>`.
    pub min_freq: usize,
    pub emb_dim: usize,
    pub layers: Vec<usize>,
    pub tied: bool,
    pub batch: usize,
    pub eval_batch: usize,
    pub bptt: usize,
    pub randomize_bptt: bool,
    pub dropout: DropoutSpec,
    pub reg: RegularizationSpec,
    /// Builds the PDR head and computes its loss term.
    pub pdr: bool,
    pub lr: f64,
    pub clip: f64,
    pub nonmono: usize,
    pub epochs: usize,
    /// Caps training windows per epoch; `0` means no cap.
    pub max_steps_per_epoch: usize,
    /// Stop after this many epochs without a new best; `0` disables.
    pub patience: usize,
    pub finetune: bool,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub cache: CacheConfig,
    /// Directory receiving checkpoints and metrics.
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    /// Word-level settings of the 3-layer tied model (d = 400; 1150, 1150,
    /// 400), with the usual AWD-LSTM regularization constants.
    fn default() -> Self {
        RunConfig {
            train: PathBuf::from("data/train.txt"),
            valid: PathBuf::from("data/valid.txt"),
            test: None,
            level: Level::Word,
            min_freq: 1,
            emb_dim: 400,
            layers: vec![1150, 1150, 400],
            tied: true,
            batch: 20,
            eval_batch: 10,
            bptt: 70,
            randomize_bptt: true,
            dropout: DropoutSpec {
                p_word: 0.4,
                p_embed: 0.1,
                p_layer: 0.25,
                p_out: 0.4,
                p_wdrop: 0.5,
            },
            reg: RegularizationSpec {
                lambda_pdr: DEFAULT_LAMBDA_PDR,
                alpha: 2.0,
                beta: 1.0,
                weight_decay: 1.2e-6,
            },
            pdr: true,
            lr: 30.0,
            clip: 0.25,
            nonmono: 5,
            epochs: 500,
            max_steps_per_epoch: 0,
            patience: 0,
            finetune: true,
            finetune_epochs: 300,
            seed: 141,
            cache: CacheConfig {
                size: 2000,
                theta: 1.0,
                lambda: 0.1,
            },
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Every key accepted in a config file, in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "train",
    "valid",
    "test",
    "level",
    "min_freq",
    "emb_dim",
    "layers",
    "tied",
    "batch",
    "eval_batch",
    "bptt",
    "randomize_bptt",
    "p_word",
    "p_embed",
    "p_layer",
    "p_out",
    "p_wdrop",
    "lambda_pdr",
    "alpha",
    "beta",
    "weight_decay",
    "pdr",
    "lr",
    "clip",
    "nonmono",
    "epochs",
    "max_steps_per_epoch",
    "patience",
    "finetune",
    "finetune_epochs",
    "seed",
    "cache_size",
    "cache_theta",
    "cache_lambda",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            config.set(key, value.trim())?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = RunConfig::parse(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train" => self.train = PathBuf::from(value),
            "valid" => self.valid = PathBuf::from(value),
            "test" => self.test = (!value.is_empty()).then(|| PathBuf::from(value)),
            "level" => self.level = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "emb_dim" => self.emb_dim = parse(key, value)?,
            "layers" => self.layers = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?,
            "tied" => self.tied = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "eval_batch" => self.eval_batch = parse(key, value)?,
            "bptt" => self.bptt = parse(key, value)?,
            "randomize_bptt" => self.randomize_bptt = parse(key, value)?,
            "p_word" => self.dropout.p_word = parse(key, value)?,
            "p_embed" => self.dropout.p_embed = parse(key, value)?,
            "p_layer" => self.dropout.p_layer = parse(key, value)?,
            "p_out" => self.dropout.p_out = parse(key, value)?,
            "p_wdrop" => self.dropout.p_wdrop = parse(key, value)?,
            "lambda_pdr" => self.reg.lambda_pdr = parse(key, value)?,
            "alpha" => self.reg.alpha = parse(key, value)?,
            "beta" => self.reg.beta = parse(key, value)?,
            "weight_decay" => self.reg.weight_decay = parse(key, value)?,
            "pdr" => self.pdr = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "nonmono" => self.nonmono = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps_per_epoch" => self.max_steps_per_epoch = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "finetune" => self.finetune = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "cache_size" => self.cache.size = parse(key, value)?,
            "cache_theta" => self.cache.theta = parse(key, value)?,
            "cache_lambda" => self.cache.lambda = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let path = |p: &Path| p.display().to_string();
        Ok(match key {
            "train" => path(&self.train),
            "valid" => path(&self.valid),
            "test" => self.test.as_deref().map(path).unwrap_or_default(),
            "level" => self.level.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "emb_dim" => self.emb_dim.to_string(),
            "layers" => self.layers.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "tied" => self.tied.to_string(),
            "batch" => self.batch.to_string(),
            "eval_batch" => self.eval_batch.to_string(),
            "bptt" => self.bptt.to_string(),
            "randomize_bptt" => self.randomize_bptt.to_string(),
            "p_word" => self.dropout.p_word.to_string(),
            "p_embed" => self.dropout.p_embed.to_string(),
            "p_layer" => self.dropout.p_layer.to_string(),
            "p_out" => self.dropout.p_out.to_string(),
            "p_wdrop" => self.dropout.p_wdrop.to_string(),
            "lambda_pdr" => self.reg.lambda_pdr.to_string(),
            "alpha" => self.reg.alpha.to_string(),
            "beta" => self.reg.beta.to_string(),
            "weight_decay" => self.reg.weight_decay.to_string(),
            "pdr" => self.pdr.to_string(),
            "lr" => self.lr.to_string(),
            "clip" => self.clip.to_string(),
            "nonmono" => self.nonmono.to_string(),
            "epochs" => self.epochs.to_string(),
            "max_steps_per_epoch" => self.max_steps_per_epoch.to_string(),
            "patience" => self.patience.to_string(),
            "finetune" => self.finetune.to_string(),
            "finetune_epochs" => self.finetune_epochs.to_string(),
            "seed" => self.seed.to_string(),
            "cache_size" => self.cache.size.to_string(),
            "cache_theta" => self.cache.theta.to_string(),
            "cache_lambda" => self.cache.lambda.to_string(),
            "out_dir" => path(&self.out_dir),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    /// Canonical rendering of every key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = self.get(key).expect("listed keys are known");
            writeln!(out, "{key} = {value}").expect("string write");
        }
        out
    }

    /// Keys whose values differ, as `(key, self, other)`.
    pub fn diff(&self, other: &RunConfig) -> Vec<(String, String, String)> {
        CONFIG_KEYS
            .iter()
            .filter_map(|key| {
                let (a, b) = (self.get(key).ok()?, other.get(key).ok()?);
                (a != b).then(|| (key.to_string(), a, b))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("emb_dim", self.emb_dim),
            ("batch", self.batch),
            ("eval_batch", self.eval_batch),
            ("bptt", self.bptt),
            ("nonmono", self.nonmono),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Config(
                "layers must be a non-empty list of positive sizes".into(),
            ));
        }
        if self.tied && self.layers.last() != Some(&self.emb_dim) {
            return Err(Error::Config(format!(
                "tied weights need the last layer ({}) to equal emb_dim ({})",
                self.layers.last().copied().unwrap_or(0),
                self.emb_dim
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!("clip must be >= 0, got {}", self.clip)));
        }
        self.dropout.validate()?;
        self.reg.validate()?;
        self.cache.validate()
    }

    /// Model shape for a vocabulary of `vocab_size` tokens.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            emb_dim: self.emb_dim,
            layers: self.layers.clone(),
            tied: self.tied,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            weight_decay: self.reg.weight_decay,
            clip: self.clip,
            nonmono: self.nonmono,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            batch: self.eval_batch,
            bptt: self.bptt,
            per_token: false,
        }
    }
}
