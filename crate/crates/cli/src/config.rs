//! Flat `key=value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use liegconv::data::TransformKind;
use liegconv::kernelnet::{Factorization, SirenConfig};
use liegconv::lie::GroupTag;
use liegconv::model::{GCNNConfig, LrSchedule, SamplingMode, TrainConfig};
use liegconv::tensor::{Activation, Padding};

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    // model
    ("group", "SE2"),
    ("factorization", "separable"),
    ("n_rotations", "4"),
    ("n_scales", "1"),
    ("scale_truncation", "1.7320508075688772"),
    ("sampling", "discretize"),
    ("allow_noncompact", "false"),
    ("stencil", "5"),
    ("channels", "8,8,16"),
    ("siren_hidden", "64,64"),
    ("omega0", "10"),
    ("subgroup_omega0", ""),
    ("activation", "sine"),
    ("head_hidden", "64"),
    ("scale_support", "2"),
    ("padding", "zero"),
    ("bn_momentum", "0.1"),
    ("bn_eps", "1e-5"),
    ("seed", "0"),
    // training
    ("epochs", "10"),
    ("batch_size", "16"),
    ("lr", "1e-3"),
    ("weight_decay", "1e-4"),
    ("schedule", "cosine"),
    ("eval_every", "1"),
    ("bn_recalibration", "2000"),
    // data
    ("dataset", "mnist"),
    ("images", "data/mnist5k-images-idx3-ubyte.gz"),
    ("labels", "data/mnist5k-labels-idx1-ubyte.gz"),
    ("transform", "rotated"),
    ("n_train", "2000"),
    ("n_test", "2000"),
    ("split_seed", "1"),
    ("transform_seed", "10"),
    // outputs and analyses
    ("out", "runs/default"),
    ("checkpoint", ""),
    ("sweep", "rotation"),
    ("n_steps", "100"),
    ("layerwise_images", "16"),
    ("pca_bins", "20"),
    // benchmark
    ("n_h", "4,8,16"),
    ("k", "5"),
    ("bench_factorizations", "nonseparable,separable"),
    ("bench_channels", "8"),
    ("bench_size", "28"),
    ("bench_batch", "8"),
    ("repeats", "5"),
    ("warmup", "1"),
];

/// A configuration failure that maps to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Resolved settings: defaults, then the file, then `--set` overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// Splits `key=value`, trimming both sides.
pub fn parse_assignment(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| err(s.trim(), "expected key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Assignments of a config file in order: one `key=value` per line, `#`
/// starts a comment.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_assignment)
        .collect()
}

impl ExperimentConfig {
    pub fn apply(&mut self, assignments: &[(String, String)]) -> Result<(), ConfigError> {
        assignments.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(err(key, "unknown key")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e: T::Err| err(key, format!("cannot parse `{}`: {e}", self.get(key))))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e: T::Err| err(key, format!("cannot parse `{s}`: {e}"))))
            .collect()
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        self.list(key)
    }

    pub fn factorizations(&self, key: &str) -> Result<Vec<Factorization>, ConfigError> {
        self.list(key)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// The checkpoint named by `checkpoint`, or `model.ckpt` in the output
    /// directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        match self.get("checkpoint") {
            "" => self.out_dir().join("model.ckpt"),
            p => PathBuf::from(p),
        }
    }

    pub fn dataset_kind(&self) -> Result<DatasetKind, ConfigError> {
        match self.get("dataset") {
            "mnist" => Ok(DatasetKind::Mnist),
            "bars" => Ok(DatasetKind::Bars),
            other => Err(err("dataset", format!("expected mnist or bars, got `{other}`"))),
        }
    }

    pub fn transform(&self) -> Result<TransformKind, ConfigError> {
        self.parse("transform")
    }

    pub fn model(&self) -> Result<GCNNConfig, ConfigError> {
        let channels = self.usize_list("channels")?;
        let channels: [usize; 3] = channels
            .try_into()
            .map_err(|_| err("channels", "expected three comma-separated widths"))?;
        let classes = match self.dataset_kind()? {
            DatasetKind::Mnist => 10,
            DatasetKind::Bars => liegconv::data::BAR_CLASSES,
        };
        let group: GroupTag = self.parse("group")?;
        let cfg = GCNNConfig {
            group,
            factorization: self.parse("factorization")?,
            n_rotations: self.usize("n_rotations")?,
            n_scales: self.usize("n_scales")?,
            scale_truncation: self.parse("scale_truncation")?,
            sampling: self.parse::<SamplingMode>("sampling")?,
            allow_noncompact: self.parse("allow_noncompact")?,
            stencil: self.usize("stencil")?,
            channels,
            siren: SirenConfig {
                hidden: self.usize_list("siren_hidden")?,
                omega0: self.parse("omega0")?,
                subgroup_omega0: match self.get("subgroup_omega0") {
                    "" => None,
                    _ => Some(self.parse("subgroup_omega0")?),
                },
                activation: self.parse::<Activation>("activation")?,
            },
            head_hidden: self.usize("head_hidden")?,
            classes,
            scale_support: self.usize("scale_support")?,
            padding: self.parse::<Padding>("padding")?,
            bn_momentum: self.parse("bn_momentum")?,
            bn_eps: self.parse("bn_eps")?,
            seed: self.u64("seed")?,
        };
        cfg.validate().map_err(|e| match e {
            liegconv::Error::Config { key, message } => err(&key, message),
            other => err("model", other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            epochs: self.usize("epochs")?,
            batch_size: self.usize("batch_size")?,
            lr: self.parse("lr")?,
            weight_decay: self.parse("weight_decay")?,
            schedule: self.parse::<LrSchedule>("schedule")?,
            eval_every: self.usize("eval_every")?,
            bn_recalibration: self.usize("bn_recalibration")?,
            seed: self.u64("seed")?,
        })
    }

    /// Checks that every typed key parses.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model()?;
        self.train()?;
        self.transform()?;
        for key in [
            "n_train",
            "n_test",
            "n_steps",
            "layerwise_images",
            "pca_bins",
            "k",
            "bench_channels",
            "bench_size",
            "bench_batch",
            "repeats",
            "warmup",
        ] {
            self.usize(key)?;
        }
        self.u64("split_seed")?;
        self.u64("transform_seed")?;
        self.usize_list("n_h")?;
        self.factorizations("bench_factorizations")?;
        match self.get("sweep") {
            "rotation" | "scale" => Ok(()),
            other => Err(err("sweep", format!("expected rotation or scale, got `{other}`"))),
        }
    }

    /// `# key=value` lines for output headers.
    pub fn header(&self, command: &str) -> String {
        let mut s = format!("# liegconv {command}\n");
        for (k, v) in &self.values {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Bars,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = ExperimentConfig::default();
        let e = c.apply(&parse_lines("epochs=3\nlearning_rate=1\n").unwrap()).unwrap_err();
        assert_eq!(e.key, "learning_rate");
        assert_eq!(c.get("epochs"), "3");
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut c = ExperimentConfig::default();
        c.apply(&parse_lines("# header\n\n lr = 0.5  # inline\n").unwrap()).unwrap();
        assert_eq!(c.get("lr"), "0.5");
    }

    #[test]
    fn bad_values_name_their_key() {
        let mut c = ExperimentConfig::default();
        c.set("channels", "4,4").unwrap();
        assert_eq!(c.validate().unwrap_err().key, "channels");
        let mut c = ExperimentConfig::default();
        c.set("group", "R2xRplus").unwrap();
        c.set("n_rotations", "1").unwrap();
        c.set("sampling", "random").unwrap();
        assert_eq!(c.validate().unwrap_err().key, "sampling");
    }

    #[test]
    fn header_echoes_every_key() {
        let c = ExperimentConfig::default();
        let h = c.header("train");
        assert!(h.starts_with("# liegconv train\n"));
        assert_eq!(h.lines().count(), DEFAULTS.len() + 1);
        assert!(h.contains("# seed=0\n"));
    }
}
