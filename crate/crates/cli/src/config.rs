//! Experiment configuration: a JSON object whose keys are dotted names
//! such as `trainer.J` or `model.alpha`. Nested objects are accepted and
//! flattened, so `{"trainer": {"J": 200}}` and `{"trainer.J": 200}` mean the
//! same thing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mivi_core::trainer::{AdamConfig, TrainerConfig};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Toy2d,
    Nb,
    Logistic,
    Bridge,
    Gradcheck,
    Klcheck,
    Evidence,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Toy2d,
        Experiment::Nb,
        Experiment::Logistic,
        Experiment::Bridge,
        Experiment::Gradcheck,
        Experiment::Klcheck,
        Experiment::Evidence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy2d => "toy2d",
            Experiment::Nb => "nb",
            Experiment::Logistic => "logistic",
            Experiment::Bridge => "bridge",
            Experiment::Gradcheck => "gradcheck",
            Experiment::Klcheck => "klcheck",
            Experiment::Evidence => "evidence",
        }
    }

    /// Whether the experiment runs the training loop and so accepts the
    /// `trainer.*` keys.
    pub fn trains(self) -> bool {
        !matches!(self, Experiment::Gradcheck | Experiment::Klcheck)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!("unknown experiment '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// Keys accepted by every experiment.
pub const COMMON_KEYS: &[&str] = &["experiment", "seed", "output.dir"];

/// Keys accepted by every experiment that trains.
pub const TRAINER_KEYS: &[&str] = &[
    "trainer.J",
    "trainer.T",
    "trainer.M",
    "trainer.epochs",
    "trainer.lr",
    "trainer.beta1",
    "trainer.beta2",
    "trainer.adam_eps",
    "trainer.lr_phi",
    "trainer.lr_eta",
    "trainer.lr_disc",
    "trainer.minibatch",
    "trainer.stop_gradient",
    "trainer.average_over_steps",
    "trainer.disc_hidden",
    "trainer.pilot_rounds",
    "trainer.checkpoint_every",
    "trainer.divergence_window",
];

#[derive(Clone, Debug)]
pub struct Config {
    pub experiment: Experiment,
    pub seed: u64,
    /// Directory the config file lives in; relative paths resolve against it.
    pub base_dir: PathBuf,
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
        }
        other => {
            if out.insert(prefix.to_string(), other.clone()).is_some() {
                return Err(CliError::config(prefix, "key given more than once"));
            }
        }
    }
    Ok(())
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base_dir).map_err(|e| match e {
            CliError::ConfigSyntax { source, .. } => CliError::ConfigSyntax {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Parses config text. `base_dir` anchors relative paths.
    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|source| CliError::ConfigSyntax {
            path: PathBuf::new(),
            source,
        })?;
        if !root.is_object() {
            return Err(CliError::config("<root>", "config must be a JSON object"));
        }
        let mut values = BTreeMap::new();
        flatten("", &root, &mut values)?;
        let experiment = match values.get("experiment") {
            None => return Err(CliError::config("experiment", "missing")),
            Some(Value::String(s)) => s.parse().map_err(|m: String| CliError::config("experiment", m))?,
            Some(_) => return Err(CliError::config("experiment", "expected a string")),
        };
        let mut cfg = Config {
            experiment,
            seed: 0,
            base_dir,
            values,
        };
        cfg.seed = cfg.u64_or("seed", 0)?;
        Ok(cfg)
    }

    /// Rejects any key not in `COMMON_KEYS`, the trainer keys (for training
    /// experiments) or `extra`.
    pub fn check_keys(&self, extra: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            let known = COMMON_KEYS.contains(&key.as_str())
                || (self.experiment.trains() && TRAINER_KEYS.contains(&key.as_str()))
                || extra.contains(&key.as_str());
            if !known {
                return Err(CliError::config(
                    key.clone(),
                    format!("unknown key for experiment '{}'", self.experiment),
                ));
            }
        }
        Ok(())
    }

    /// All keys and values, in key order.
    pub fn entries(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(CliError::config(key, "expected a finite number")),
            },
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    /// A number that must be strictly positive.
    pub fn positive_or(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64_or(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(CliError::config(key, format!("must be positive, got {v}")))
        }
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| CliError::config(key, "expected a non-negative integer")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.u64_opt(key)?.unwrap_or(default))
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.u64_opt(key)?
            .map(|v| usize::try_from(v).map_err(|_| CliError::config(key, "integer out of range")))
            .transpose()
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    /// An integer that must be at least `min`.
    pub fn count_or(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.usize_or(key, default)?;
        if v < min {
            return Err(CliError::config(key, format!("must be at least {min}, got {v}")));
        }
        Ok(v)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(CliError::config(key, "expected true or false")),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(CliError::config(key, "expected a string")),
        }
    }

    /// Parses a string-valued key with `FromStr`.
    pub fn parse_or<T>(&self, key: &str, default: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.str_or(key, default)?
            .parse()
            .map_err(|e: T::Err| CliError::config(key, e.to_string()))
    }

    /// A list of numbers; a bare number is read as a one-element list.
    pub fn f64_list_opt(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let bad = || CliError::config(key, "expected a number or a list of numbers");
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()).ok_or_else(bad))
                .collect::<Result<Vec<f64>>>()
                .map(Some),
            Some(v) => v.as_f64().filter(|x| x.is_finite()).map(|x| Some(vec![x])).ok_or_else(bad),
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .and_then(|x| usize::try_from(x).ok())
                        .ok_or_else(|| CliError::config(key, "expected a list of non-negative integers"))
                })
                .collect(),
            Some(_) => Err(CliError::config(key, "expected a list of non-negative integers")),
        }
    }

    /// A path resolved against the config directory. The file must exist.
    pub fn existing_path_opt(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => {
                let path = self.resolve(s);
                if path.is_file() {
                    Ok(Some(path))
                } else {
                    Err(CliError::config(key, format!("file {} does not exist", path.display())))
                }
            }
            Some(_) => Err(CliError::config(key, "expected a path string")),
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The output directory: `override_dir` if given, else `output.dir`
    /// relative to the config file.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> Result<PathBuf> {
        let dir = match override_dir {
            Some(d) => d.to_path_buf(),
            None => match self.get("output.dir") {
                Some(Value::String(s)) => self.resolve(s),
                Some(_) => return Err(CliError::config("output.dir", "expected a path string")),
                None => return Err(CliError::config("output.dir", "missing (and no --out given)")),
            },
        };
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::config("output.dir", format!("cannot create {}: {e}", dir.display())))?;
        let probe = dir.join(".mivi-write-test");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| CliError::config("output.dir", format!("{} is not writable: {e}", dir.display())))?;
        Ok(dir)
    }

    /// Trainer settings: `defaults` overridden by any `trainer.*` keys.
    pub fn trainer(&self, defaults: TrainerConfig, threads: usize) -> Result<TrainerConfig> {
        let d = &defaults;
        let lr_opt = |key: &str| -> Result<Option<f64>> {
            match self.f64_opt(key)? {
                Some(v) if v <= 0.0 => Err(CliError::config(key, format!("must be positive, got {v}"))),
                v => Ok(v),
            }
        };
        let adam = AdamConfig {
            lr: self.positive_or("trainer.lr", d.adam.lr)?,
            beta1: self.f64_or("trainer.beta1", d.adam.beta1)?,
            beta2: self.f64_or("trainer.beta2", d.adam.beta2)?,
            eps: self.positive_or("trainer.adam_eps", d.adam.eps)?,
        };
        for (key, b) in [("trainer.beta1", adam.beta1), ("trainer.beta2", adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(CliError::config(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        let minibatch = self.usize_opt("trainer.minibatch")?.or(d.minibatch);
        if minibatch == Some(0) {
            return Err(CliError::config("trainer.minibatch", "must be positive"));
        }
        let cfg = TrainerConfig {
            particles: self.count_or("trainer.J", d.particles, 1)?,
            steps: self.count_or("trainer.T", d.steps, 1)?,
            warmup: self.usize_or("trainer.M", d.warmup)?,
            epochs: self.usize_or("trainer.epochs", d.epochs)?,
            adam,
            lr_phi: lr_opt("trainer.lr_phi")?.or(d.lr_phi),
            lr_eta: lr_opt("trainer.lr_eta")?.or(d.lr_eta),
            lr_disc: lr_opt("trainer.lr_disc")?.or(d.lr_disc),
            minibatch,
            stop_gradient: self.bool_or("trainer.stop_gradient", d.stop_gradient)?,
            average_over_steps: self.bool_or("trainer.average_over_steps", d.average_over_steps)?,
            disc_hidden: self.count_or("trainer.disc_hidden", d.disc_hidden, 1)?,
            pilot_rounds: self.usize_or("trainer.pilot_rounds", d.pilot_rounds)?,
            checkpoint_every: self.usize_or("trainer.checkpoint_every", d.checkpoint_every)?,
            divergence_window: self.count_or("trainer.divergence_window", d.divergence_window, 1)?,
            threads: threads.max(1),
            seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::config("trainer", e.to_string()))?;
        Ok(cfg)
    }
}
