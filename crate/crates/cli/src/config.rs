//! Run configuration: one JSON file, optionally overridden by flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use uqkit::nn::{Head, LossKind, NetworkSpec, OptimizerConfig};
use uqkit::scoring::Scorer;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub sigma: f64,
    /// train / validation / test fractions.
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// Where the data comes from. Either IDX files or a synthetic blob set.
///
/// With IDX files, rows `[0, train_limit)` of the train file are used for
/// training and rows `[train_limit, train_limit + val_limit)` for threshold
/// calibration; the test file supplies its first `test_limit` rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// An IDX image file, or a directory whose files are all IDX image files.
    pub ood_images: Option<PathBuf>,
    /// Images labeled "unknown" when training an unknown-class ensemble.
    pub ood_pool_images: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub val_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub ood_limit: Option<usize>,
    pub ood_pool_limit: Option<usize>,
    pub blobs: Option<BlobConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// The reference convolutional classifier for 28×28 images.
    ReferenceCnn,
    Mlp {
        #[serde(default = "one")]
        hidden_layers: usize,
        #[serde(default = "sixteen")]
        width: usize,
    },
    Inline {
        spec: NetworkSpec,
    },
}

fn one() -> usize {
    1
}

fn sixteen() -> usize {
    16
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::ReferenceCnn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub axis: String,
    /// Strings or numbers, e.g. `[1, 4, 8]` or `["mse", "hinge_multiclass"]`.
    pub values: Vec<serde_json::Value>,
}

impl StudyConfig {
    pub fn value_strings(&self) -> Vec<String> {
        self.values
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeConfig {
    #[serde(default = "unit")]
    pub lambda: f64,
    /// Defaults to the run's `epochs`.
    pub epochs: Option<usize>,
}

fn unit() -> f64 {
    1.0
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig { lambda: 1.0, epochs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required: there is no implicit entropy anywhere.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub architecture: Architecture,
    /// Overrides the architecture's head (default softmax).
    pub head: Option<Head>,
    /// Overrides the architecture's loss (default categorical cross-entropy).
    pub loss: Option<LossKind>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Train the ensemble with an extra "unknown" class fed from `ood_pool_images`.
    #[serde(default)]
    pub unknown_class: bool,
    #[serde(default = "default_scorers")]
    pub scorers: Vec<Scorer>,
    #[serde(default = "default_passes")]
    pub mc_passes: usize,
    #[serde(default = "default_fpr")]
    pub target_fpr: f64,
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub sae: SaeConfig,
    /// Model directory, or bundle directory (then `member` picks the network).
    pub model: Option<PathBuf>,
    /// Network for the softmax-based scorers; defaults to `model`.
    pub baseline_model: Option<PathBuf>,
    #[serde(default)]
    pub member: usize,
    pub sae_model: Option<PathBuf>,
    /// Unknown-class ensemble used as an extra OOD scorer.
    pub bundle: Option<PathBuf>,
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(0.002)
}

fn default_epochs() -> usize {
    5
}

fn default_batch() -> usize {
    32
}

fn default_k() -> usize {
    10
}

fn default_scorers() -> Vec<Scorer> {
    Scorer::ALL.to_vec()
}

fn default_passes() -> usize {
    uqkit::scoring::DEFAULT_MC_PASSES
}

fn default_fpr() -> f64 {
    0.05
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub ood_images: Option<PathBuf>,
    #[arg(long)]
    pub ood_pool_images: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub baseline_model: Option<PathBuf>,
    #[arg(long)]
    pub sae_model: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Ensemble size.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Add an "unknown" class fed from the OOD pool when training an ensemble.
    #[arg(long)]
    pub unknown_class: bool,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        // paths inside a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths_mut() {
            rebase(base, p);
        }
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 11] {
        let d = &mut self.data;
        [
            &mut self.out,
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
            &mut d.ood_images,
            &mut d.ood_pool_images,
            &mut self.model,
            &mut self.baseline_model,
            &mut self.sae_model,
            &mut self.bundle,
        ]
    }

    /// Loads `--config` (if any) and applies the flag overrides.
    pub fn resolve(o: &Overrides) -> CliResult<Self> {
        let mut cfg = match &o.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        fn set<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        set(&mut cfg.seed, &o.seed);
        set(&mut cfg.threads, &o.threads);
        set(&mut cfg.out, &o.out);
        set(&mut cfg.data.train_images, &o.train_images);
        set(&mut cfg.data.train_labels, &o.train_labels);
        set(&mut cfg.data.test_images, &o.test_images);
        set(&mut cfg.data.test_labels, &o.test_labels);
        set(&mut cfg.data.ood_images, &o.ood_images);
        set(&mut cfg.data.ood_pool_images, &o.ood_pool_images);
        set(&mut cfg.model, &o.model);
        set(&mut cfg.baseline_model, &o.baseline_model);
        set(&mut cfg.sae_model, &o.sae_model);
        set(&mut cfg.bundle, &o.bundle);
        if let Some(k) = o.k {
            cfg.k = k;
        }
        if let Some(e) = o.epochs {
            cfg.epochs = e;
        }
        cfg.unknown_class |= o.unknown_class;
        Ok(cfg)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (config \"seed\" or --seed)".into()))
    }

    pub fn out(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("an output directory is required (config \"out\" or --out)".into()))
    }

    pub fn threads(&self) -> CliResult<usize> {
        match self.threads.unwrap_or(1) {
            0 => Err(CliError::Config("threads must be at least 1".into())),
            t => Ok(t),
        }
    }

    /// Fails if any path named in the config does not exist, whether or not
    /// the current command reads it.
    pub fn check_paths(&self) -> CliResult<()> {
        let d = &self.data;
        let named = [
            ("train_images", &d.train_images),
            ("train_labels", &d.train_labels),
            ("test_images", &d.test_images),
            ("test_labels", &d.test_labels),
            ("ood_images", &d.ood_images),
            ("ood_pool_images", &d.ood_pool_images),
            ("model", &self.model),
            ("baseline_model", &self.baseline_model),
            ("sae_model", &self.sae_model),
            ("bundle", &self.bundle),
        ];
        for (name, p) in named {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::Config(format!("{name} path {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self, epochs: usize, shuffle_seed: u64) -> uqkit::nn::TrainConfig {
        uqkit::nn::TrainConfig::new(self.optimizer, epochs, self.batch_size, shuffle_seed)
    }

    /// The network spec for `input_shape` samples and `n_outputs` classes.
    pub fn network_spec(&self, input_shape: &[usize], n_outputs: usize, seed: u64) -> CliResult<NetworkSpec> {
        let head = self.head.unwrap_or(Head::Softmax);
        let mut spec = match &self.architecture {
            Architecture::ReferenceCnn => NetworkSpec::reference_cnn(n_outputs, head, seed),
            Architecture::Mlp { hidden_layers, width } => {
                NetworkSpec::mlp(input_shape, *hidden_layers, *width, n_outputs, head, seed)
            }
            Architecture::Inline { spec } => {
                let mut spec = spec.clone();
                if let Some(h) = self.head {
                    spec.head = h;
                }
                spec.seed = seed;
                spec
            }
        };
        if let Some(loss) = self.loss {
            spec.loss = loss;
        }
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let outputs = spec.output_size().map_err(|e| CliError::Config(e.to_string()))?;
        if outputs != n_outputs {
            return Err(CliError::Config(format!(
                "architecture has {outputs} outputs but the data needs {n_outputs}"
            )));
        }
        Ok(spec)
    }
}
