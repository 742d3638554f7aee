//! Experiment files: a TOML document describing one run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use varsim_core::averaging::AveragingConfig;
use varsim_core::data::{load_idx_limited, Dataset};
use varsim_core::nn::{mlp, Activation, Hyperparams, InitDistribution};
use varsim_core::rng::{substream, GLOBAL};
use varsim_core::simulator::{Acquisition, DataMode, Mode, SimConfig};
use varsim_core::topology::{build_regular, build_star, Graph};

/// The only config format version this build understands.
pub const CONFIG_VERSION: u32 = 1;

/// Overrides the directory that relative data paths resolve against.
pub const DATA_ROOT_ENV: &str = "VARSIM_DATA_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported config_version {found}; expected {CONFIG_VERSION}")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("missing data file {0}")]
    MissingData(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    #[serde(default)]
    pub mode: Mode,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: Hyperparams,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub averaging: AveragingConfig,
    pub data: DataConfig,
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Regular,
    Star,
    /// A regular baseline whose links open as nodes pass the accuracy gate.
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    /// Node count. For a federated star this includes the server (node 0).
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Layer widths from input to output.
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub init: InitDistribution,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: vec![784, 128, 10],
            activation: Activation::Relu,
            init: InitDistribution::Uniform,
        }
    }
}

/// `t_acquisition = 10` or `t_acquisition = [1, 19]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Period {
    Fixed(u64),
    Range([u64; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_acquisition: Period,
    pub r: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_acquisition: Period::Fixed(10),
            r: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Dirichlet concentration; absent means IID.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_train_subset")]
    pub train_subset: usize,
    #[serde(default = "default_test_subset")]
    pub test_subset: usize,
}

fn default_train_subset() -> usize {
    10_000
}

fn default_test_subset() -> usize {
    2_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub max_ticks: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_broadcast_tick: Option<u64>,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    /// Worker threads; results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_eval_interval() -> u64 {
    10
}

fn default_window() -> usize {
    varsim_core::metrics::DEFAULT_SMOOTHING_WINDOW
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs/latest"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        // check the version first so old files get a clear message
        #[derive(Deserialize)]
        struct Versioned {
            config_version: Option<u32>,
        }
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let v: Versioned = toml::from_str(text).map_err(parse_err)?;
        match v.config_version {
            Some(CONFIG_VERSION) => {}
            Some(found) => return Err(ConfigError::Version { found }),
            None => {
                return Err(ConfigError::Invalid(
                    "missing config_version".into(),
                ))
            }
        }
        let cfg: ExperimentConfig = toml::from_str(text).map_err(parse_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let t = &self.topology;
        match t.kind {
            TopologyKind::Regular | TopologyKind::Temporal => match t.k {
                None => return invalid(format!("{:?} topology needs k", t.kind).to_lowercase()),
                Some(k) if k == 0 || k >= t.n || (t.n * k) % 2 != 0 => {
                    return invalid(format!(
                        "no {k}-regular graph on {} nodes (need 0 < k < n, n*k even)",
                        t.n
                    ))
                }
                _ => {}
            },
            TopologyKind::Star => {
                if t.n < 2 {
                    return invalid("a star needs at least 2 nodes".into());
                }
            }
        }
        if self.mode == Mode::Federated && t.kind != TopologyKind::Star {
            return invalid("federated mode needs topology.kind = \"star\"".into());
        }
        if self.model.layers.len() < 2 {
            return invalid("model.layers needs at least an input and an output width".into());
        }
        if self.data.train_subset == 0 || self.data.test_subset == 0 {
            return invalid("data subsets must be non-empty".into());
        }
        if self.sim.smoothing_window == 0 {
            return invalid("sim.smoothing_window must be at least 1".into());
        }
        if self.sim.threads == Some(0) {
            return invalid("sim.threads must be at least 1".into());
        }
        self.sim_config()?
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let arch = mlp(&self.model.layers, self.model.activation)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut c = SimConfig::new(arch);
        c.mode = self.mode;
        c.init = self.model.init;
        c.hyperparams = self.training.clone();
        c.averaging = self.averaging.clone();
        c.interval_ratio = self.schedule.r;
        c.acquisition = match self.schedule.t_acquisition {
            Period::Fixed(t) => Acquisition::Fixed(t),
            Period::Range([lo, hi]) => Acquisition::Uniform { lo, hi },
        };
        c.max_ticks = self.sim.max_ticks;
        c.eval_interval = self.sim.eval_interval;
        c.seed = self.sim.seed;
        c.global_broadcast_tick = self.sim.global_broadcast_tick;
        c.data = match self.data.alpha {
            None => DataMode::Iid,
            Some(alpha) => DataMode::Dirichlet { alpha },
        };
        c.temporal = self.topology.kind == TopologyKind::Temporal;
        c.threads = self.sim.threads;
        Ok(c)
    }

    pub fn graph(&self) -> Result<Graph, ConfigError> {
        let t = &self.topology;
        let built = match t.kind {
            TopologyKind::Star => build_star(t.n),
            TopologyKind::Regular | TopologyKind::Temporal => build_regular(
                t.n,
                t.k.unwrap_or(0),
                &mut substream(self.sim.seed, GLOBAL, "graph"),
            ),
        };
        built.map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Where relative data paths are resolved: `$VARSIM_DATA_ROOT` if set,
/// otherwise the directory holding the config file.
pub fn data_root(config_path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root),
        _ => config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    }
}

fn resolve(root: &Path, p: &Path) -> Result<PathBuf, ConfigError> {
    let full = if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
    if full.is_file() {
        Ok(full)
    } else {
        Err(ConfigError::MissingData(full))
    }
}

pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

/// Resolves and checks every data path, then loads both splits.
pub fn load_data(cfg: &DataConfig, root: &Path) -> Result<Datasets, LoadError> {
    let paths = [
        resolve(root, &cfg.train_images)?,
        resolve(root, &cfg.train_labels)?,
        resolve(root, &cfg.test_images)?,
        resolve(root, &cfg.test_labels)?,
    ];
    let train = load_idx_limited(&paths[0], &paths[1], Some(cfg.train_subset))?;
    let test = load_idx_limited(&paths[2], &paths[3], Some(cfg.test_subset))?;
    Ok(Datasets { train, test })
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] varsim_core::Error),
}
