//! Experiment configuration: a flat `key = value` file, overridden by flags,
//! validated field by field, and written back out as a resolved snapshot.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::env::PATCH_SIZES;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::numerics::DType;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Mnist,
    Cifar10,
    Synthetic,
}

impl FromStr for Dataset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mnist" => Ok(Dataset::Mnist),
            "cifar10" => Ok(Dataset::Cifar10),
            "synthetic" => Ok(Dataset::Synthetic),
            _ => Err("expected one of mnist, cifar10, synthetic".into()),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Mnist => "mnist",
            Dataset::Cifar10 => "cifar10",
            Dataset::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Cbgt,
    Lstm,
    SinglePatch,
}

impl FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cbgt" => Ok(ModelChoice::Cbgt),
            "lstm" => Ok(ModelChoice::Lstm),
            "single_patch" => Ok(ModelChoice::SinglePatch),
            _ => Err("expected one of cbgt, lstm, single_patch".into()),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Cbgt => "cbgt",
            ModelChoice::Lstm => "lstm",
            ModelChoice::SinglePatch => "single_patch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderChoice {
    Lenet5,
    ResnetLite,
    Mlp,
    Identity,
}

impl FromStr for EncoderChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lenet5" => Ok(EncoderChoice::Lenet5),
            "resnet_lite" => Ok(EncoderChoice::ResnetLite),
            "mlp" => Ok(EncoderChoice::Mlp),
            "identity" => Ok(EncoderChoice::Identity),
            _ => Err("expected one of lenet5, resnet_lite, mlp, identity".into()),
        }
    }
}

impl fmt::Display for EncoderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderChoice::Lenet5 => "lenet5",
            EncoderChoice::ResnetLite => "resnet_lite",
            EncoderChoice::Mlp => "mlp",
            EncoderChoice::Identity => "identity",
        })
    }
}

/// Every key the configuration understands.
pub const KEYS: [&str; 25] = [
    "batch_size",
    "budget",
    "categories",
    "data_root",
    "dataset",
    "encoder",
    "episodes",
    "eta",
    "eval_seed",
    "hidden",
    "lr",
    "max_steps",
    "model",
    "out",
    "patch_size",
    "precision",
    "seed",
    "seq_len",
    "stop_at_convergence",
    "tau",
    "test_limit",
    "train_limit",
    "val_episodes",
    "val_every",
    "val_seed",
];

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub data_root: PathBuf,
    pub patch_size: Option<usize>,
    pub model: ModelChoice,
    pub encoder: EncoderChoice,
    /// Hidden layer widths for the `mlp` encoder.
    pub hidden: Vec<usize>,
    pub tau: Option<f64>,
    pub seq_len: Option<usize>,
    pub seed: u64,
    pub max_steps: usize,
    /// Training budget in episodes.
    pub budget: u64,
    pub batch_size: usize,
    pub val_episodes: usize,
    pub val_every: usize,
    pub val_seed: u64,
    pub stop_at_convergence: bool,
    pub lr: f64,
    /// Evaluation episodes.
    pub episodes: usize,
    pub eval_seed: u64,
    pub precision: DType,
    /// Noise rate of the synthetic environment.
    pub eta: f64,
    /// Categories of the synthetic environment.
    pub categories: usize,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub out: PathBuf,
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_flat(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            config_err(
                &format!("{}:{}", origin.display(), no + 1),
                format!("expected `key = value`, got {line:?}"),
            )
        })?;
        let key = k.trim().replace('-', "_");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(config_err(&key, format!("set twice in {}", origin.display())));
        }
    }
    Ok(map)
}

pub fn read_flat(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_flat(&text, path)
}

struct Fields<'a>(&'a BTreeMap<String, String>);

impl Fields<'_> {
    fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| config_err(key, format!("cannot parse {s:?}: {e}"))),
        }
    }

    fn or<V: FromStr>(&self, key: &str, default: V) -> Result<V>
    where
        V::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

impl ExperimentConfig {
    /// Builds and validates a configuration from resolved key/value pairs.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(config_err(k, "unknown key"));
        }
        let f = Fields(map);
        let dataset: Dataset = f.or("dataset", Dataset::Mnist)?;
        let default_encoder = match dataset {
            Dataset::Mnist => EncoderChoice::Lenet5,
            Dataset::Cifar10 => EncoderChoice::ResnetLite,
            Dataset::Synthetic => EncoderChoice::Identity,
        };
        let hidden = match map.get("hidden").map(|s| s.trim()) {
            None | Some("") => Vec::new(),
            Some(s) => s
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| config_err("hidden", format!("cannot parse {s:?}: {e}")))?,
        };
        let cfg = Self {
            dataset,
            data_root: f.or("data_root", PathBuf::from(format!("data/{dataset}")))?,
            patch_size: f.get("patch_size")?,
            model: f.or("model", ModelChoice::Cbgt)?,
            encoder: f.or("encoder", default_encoder)?,
            hidden,
            tau: f.get("tau")?,
            seq_len: f.get("seq_len")?,
            seed: f.or("seed", 0)?,
            max_steps: f.or("max_steps", crate::cbgt::DEFAULT_MAX_STEPS)?,
            budget: f.or("budget", 2_000_000)?,
            batch_size: f.or("batch_size", 512)?,
            val_episodes: f.or("val_episodes", 1024)?,
            val_every: f.or("val_every", 2)?,
            val_seed: f.or("val_seed", 0x7661_6c69_6461_7465)?,
            stop_at_convergence: f.or("stop_at_convergence", true)?,
            lr: f.or("lr", 1e-3)?,
            episodes: f.or("episodes", crate::eval::DEFAULT_EVAL_EPISODES)?,
            eval_seed: f.or("eval_seed", 0x6576_616c)?,
            precision: f.or("precision", DType::F32)?,
            eta: f.or("eta", 0.0)?,
            categories: f.or("categories", 10)?,
            train_limit: f.get("train_limit")?,
            test_limit: f.get("test_limit")?,
            out: f.or("out", PathBuf::from("runs"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset {
            Dataset::Mnist | Dataset::Cifar10 => match self.patch_size {
                None => return Err(config_err("patch_size", "required for image datasets")),
                Some(p) if !PATCH_SIZES.contains(&p) => {
                    return Err(config_err("patch_size", format!("{p} is not one of {PATCH_SIZES:?}")))
                }
                _ => {}
            },
            Dataset::Synthetic => {
                if self.patch_size.is_some() {
                    return Err(config_err("patch_size", "not used by the synthetic dataset"));
                }
                if !(0.0..=1.0).contains(&self.eta) {
                    return Err(config_err("eta", format!("{} outside [0, 1]", self.eta)));
                }
                if self.categories < 2 {
                    return Err(config_err("categories", "need at least 2"));
                }
            }
        }
        match (self.model, self.tau, self.seq_len) {
            (_, Some(_), Some(_)) => return Err(config_err("tau", "tau and seq_len are mutually exclusive")),
            (ModelChoice::Cbgt, None, _) => return Err(config_err("tau", "required for the cbgt model")),
            (ModelChoice::Cbgt, Some(t), _) if !(t.is_finite() && t >= 0.0) => {
                return Err(config_err("tau", format!("{t} must be finite and >= 0")))
            }
            (ModelChoice::Lstm, _, None) => return Err(config_err("seq_len", "required for the lstm model")),
            (ModelChoice::Lstm, _, Some(0)) => return Err(config_err("seq_len", "must be at least 1")),
            (ModelChoice::SinglePatch, Some(_), _) => {
                return Err(config_err("tau", format!("not used by the {} model", self.model)))
            }
            (ModelChoice::SinglePatch, _, Some(_)) => {
                return Err(config_err("seq_len", format!("not used by the {} model", self.model)))
            }
            _ => {}
        }
        let ok = match self.encoder {
            EncoderChoice::Lenet5 => self.dataset == Dataset::Mnist,
            EncoderChoice::ResnetLite => self.dataset == Dataset::Cifar10,
            EncoderChoice::Identity => self.dataset == Dataset::Synthetic,
            EncoderChoice::Mlp => true,
        };
        if !ok {
            return Err(config_err(
                "encoder",
                format!("{} does not fit the {} dataset", self.encoder, self.dataset),
            ));
        }
        for (field, v) in [
            ("max_steps", self.max_steps),
            ("batch_size", self.batch_size),
            ("val_episodes", self.val_episodes),
            ("val_every", self.val_every),
            ("episodes", self.episodes),
        ] {
            if v == 0 {
                return Err(config_err(field, "must be at least 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("lr", "must be positive"));
        }
        Ok(())
    }

    /// The configuration as key/value pairs; [`ExperimentConfig::from_map`]
    /// of the result gives back an equal configuration.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("dataset", self.dataset.to_string());
        put("data_root", self.data_root.display().to_string());
        if let Some(p) = self.patch_size {
            put("patch_size", p.to_string());
        }
        put("model", self.model.to_string());
        put("encoder", self.encoder.to_string());
        if !self.hidden.is_empty() {
            put("hidden", self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        }
        if let Some(t) = self.tau {
            put("tau", t.to_string());
        }
        if let Some(l) = self.seq_len {
            put("seq_len", l.to_string());
        }
        put("seed", self.seed.to_string());
        put("max_steps", self.max_steps.to_string());
        put("budget", self.budget.to_string());
        put("batch_size", self.batch_size.to_string());
        put("val_episodes", self.val_episodes.to_string());
        put("val_every", self.val_every.to_string());
        put("val_seed", self.val_seed.to_string());
        put("stop_at_convergence", self.stop_at_convergence.to_string());
        put("lr", self.lr.to_string());
        put("episodes", self.episodes.to_string());
        put("eval_seed", self.eval_seed.to_string());
        put("precision", self.precision.to_string());
        if self.dataset == Dataset::Synthetic {
            put("eta", self.eta.to_string());
            put("categories", self.categories.to_string());
        }
        if let Some(n) = self.train_limit {
            put("train_limit", n.to_string());
        }
        if let Some(n) = self.test_limit {
            put("test_limit", n.to_string());
        }
        put("out", self.out.display().to_string());
        m
    }

    /// `key = value` lines in key order.
    pub fn snapshot(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.model {
            ModelChoice::Cbgt => ModelKind::Cbgt {
                tau: self.tau.expect("validated"),
                max_steps: self.max_steps,
            },
            ModelChoice::Lstm => ModelKind::Lstm {
                seq_len: self.seq_len.expect("validated"),
            },
            ModelChoice::SinglePatch => ModelKind::SinglePatch,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.model_kind());
        t.adam.lr = self.lr;
        t.batch_size = self.batch_size;
        t.val_episodes = self.val_episodes;
        t.val_seed = self.val_seed;
        t.val_every = self.val_every;
        t.budget_episodes = self.budget;
        t.stop_at_convergence = self.stop_at_convergence;
        t.seed = self.seed;
        t
    }
}
