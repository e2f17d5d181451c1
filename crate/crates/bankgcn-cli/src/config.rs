//! Run configuration: a flat dotted-key document merged from an optional
//! file and `--set` overrides, then validated in full before any command
//! touches the filesystem.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bankgcn::train::{LrDecay, TrainConfig};

#[derive(Debug)]
pub enum CliError {
    /// Malformed flags or config; nothing has been written yet.
    Usage(String),
    /// Failure while doing the work; earlier outputs are preserved.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    std::io::Error,
    serde_json::Error,
    bankgcn::data::DataError,
    bankgcn::graph::GraphError,
    bankgcn::model::ModelError,
    bankgcn::spectral::SpectralError,
    bankgcn::train::TrainError
);

#[derive(Debug, Clone)]
pub enum DatasetConfig {
    Tu { dir: PathBuf, name: String, normalize_attributes: bool },
    Synthetic { graphs: usize, nodes: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub subspaces: usize,
    pub order: usize,
    /// Pin every filter to the fixed low-pass response and exclude the
    /// coefficients from training; the message-passing baseline.
    pub freeze_lowpass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    Train,
    Val,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::All => "all",
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub runs: usize,
    pub eval_split: EvalSplit,
}

/// Key-value store with take-and-check-leftovers access, so a misspelled
/// key fails loudly instead of silently using a default.
struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn take_parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Usage(format!("config key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.0.keys().map(String::as_str).collect();
            Err(CliError::Usage(format!("unknown config keys: {}", keys.join(", "))))
        }
    }
}

fn parse_entries(text: &str, source: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{source}:{}: expected `key = value`, got {line:?}",
                i + 1
            )));
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

impl RunConfig {
    pub fn load(
        config_path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (k, v) in parse_entries(&text, &path.display().to_string())? {
                map.insert(k, v);
            }
        }
        for raw in overrides {
            let Some((key, value)) = raw.split_once('=') else {
                return Err(CliError::Usage(format!("--set expects KEY=VALUE, got {raw:?}")));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut keys = Keys(map);

        let dataset = match keys.take("dataset.kind").as_deref().unwrap_or("synthetic") {
            "tu" => DatasetConfig::Tu {
                dir: keys.take("dataset.dir").map(PathBuf::from).unwrap_or_else(|| "data".into()),
                name: keys.take("dataset.name").ok_or_else(|| {
                    CliError::Usage("dataset.name is required when dataset.kind = tu".into())
                })?,
                normalize_attributes: keys
                    .take_parse("dataset.normalize_attributes")?
                    .unwrap_or(false),
            },
            "synthetic" => DatasetConfig::Synthetic {
                graphs: keys.take_parse("dataset.synthetic.graphs")?.unwrap_or(500),
                nodes: keys.take_parse("dataset.synthetic.nodes")?.unwrap_or(16),
                seed: keys.take_parse("dataset.synthetic.seed")?.unwrap_or(0),
            },
            other => {
                return Err(CliError::Usage(format!(
                    "dataset.kind must be `tu` or `synthetic`, got {other:?}"
                )))
            }
        };

        let widths = match keys.take("model.widths") {
            None => vec![64; 4],
            Some(raw) => raw
                .split(',')
                .map(|w| {
                    w.trim().parse::<usize>().map_err(|e| {
                        CliError::Usage(format!("model.widths: cannot parse {:?}: {e}", w.trim()))
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        let model = ModelConfig {
            widths,
            subspaces: keys.take_parse("model.subspaces")?.unwrap_or(8),
            order: keys.take_parse("model.order")?.unwrap_or(2),
            freeze_lowpass: keys.take_parse("model.freeze_lowpass")?.unwrap_or(false),
        };

        let mut train = TrainConfig::default();
        if let Some(v) = keys.take_parse("train.learning_rate")? {
            train.learning_rate = v;
        }
        if let Some(v) = keys.take_parse("train.batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = keys.take_parse("train.max_epochs")? {
            train.max_epochs = v;
        }
        if let Some(v) = keys.take_parse("train.patience")? {
            train.patience = v;
        }
        if let Some(v) = keys.take_parse("train.weight_decay")? {
            train.weight_decay = v;
        }
        if let Some(v) = keys.take_parse("train.gamma")? {
            train.gamma = v;
        }
        if let Some(v) = keys.take_parse("train.seed")? {
            train.seed = v;
        }
        let decay_enabled = keys.take_parse::<bool>("train.lr_decay.enabled")?.unwrap_or(false);
        let factor = keys.take_parse("train.lr_decay.factor")?;
        let plateau = keys.take_parse("train.lr_decay.plateau_patience")?;
        let min_lr = keys.take_parse("train.lr_decay.min_lr")?;
        if decay_enabled {
            let mut decay = LrDecay::default();
            if let Some(v) = factor {
                decay.factor = v;
            }
            if let Some(v) = plateau {
                decay.plateau_patience = v;
            }
            if let Some(v) = min_lr {
                decay.min_lr = v;
            }
            train.lr_decay = Some(decay);
        } else if factor.is_some() || plateau.is_some() || min_lr.is_some() {
            return Err(CliError::Usage(
                "train.lr_decay.* is set but train.lr_decay.enabled is false".into(),
            ));
        }
        if let Some(s) = seed {
            train.seed = s;
        }

        let out_dir = match out {
            Some(p) => p.to_path_buf(),
            None => keys.take("outputs.dir").map(PathBuf::from).unwrap_or_else(|| "out".into()),
        };
        let runs = keys.take_parse("runs")?.unwrap_or(1);
        let eval_split = match keys.take("eval.split").as_deref() {
            None | Some("all") => EvalSplit::All,
            Some("train") => EvalSplit::Train,
            Some("val") => EvalSplit::Val,
            Some("test") => EvalSplit::Test,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "eval.split must be all, train, val, or test, got {other:?}"
                )))
            }
        };
        keys.finish()?;

        let cfg = RunConfig { dataset, model, train, out_dir, runs, eval_split };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.runs == 0 {
            return usage("runs must be at least 1".into());
        }
        if self.model.widths.is_empty() {
            return usage("model.widths must list at least one layer width".into());
        }
        if self.model.subspaces == 0 {
            return usage("model.subspaces must be at least 1".into());
        }
        for &w in &self.model.widths {
            if w == 0 {
                return usage("model.widths entries must be positive".into());
            }
            if w % self.model.subspaces != 0 {
                return usage(format!(
                    "layer width {w} is not divisible by model.subspaces = {}",
                    self.model.subspaces
                ));
            }
        }
        match &self.dataset {
            DatasetConfig::Tu { name, .. } => {
                if name.is_empty() {
                    return usage("dataset.name must not be empty".into());
                }
            }
            DatasetConfig::Synthetic { graphs, nodes, .. } => {
                if *nodes < 8 {
                    return usage(format!(
                        "dataset.synthetic.nodes must be at least 8, got {nodes}"
                    ));
                }
                if *graphs < 6 {
                    return usage(format!(
                        "dataset.synthetic.graphs must be at least 6 (3 per class), got {graphs}"
                    ));
                }
            }
        }
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }
}
