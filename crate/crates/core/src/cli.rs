//! The `iimlp` command line: `calibrate`, `propagate`, `train` and `analyze`.
//!
//! Every command reads an optional JSON [`RunConfig`], applies flag overrides, writes its outputs
//! under the output directory and finishes with a `manifest.json` ([`RunManifest`]) that echoes
//! the resolved configuration and checksums every output file. A manifest can be passed back as
//! `--config` to reproduce the run.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on usage or configuration errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{load_cifar10, load_idx, normalize, synth_blobs, Dataset, NormalizationSpec};
use crate::error::{Error, Result};
use crate::interpret::{
    contribution_map, discriminability, export_map_image, layerwise_accuracy, likelihood_csv, likelihood_series,
    DiscriminabilityOptions, MapLayout,
};
use crate::network::{Activation, InitKind, InterpretableMLP, NetworkConfig};
use crate::rng::SeededRng;
use crate::sigprop::{
    calibrate, empirical_spectrum_at_init, monte_carlo_profile, spectrum_csv, theoretical_spectrum, Calibration,
};
use crate::trainer::{train, weight_deviation, weight_deviation_csv, EpochMetrics, TrainConfig, TrainOutput};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// IDX files named as in the MNIST / Fashion-MNIST distribution.
    #[default]
    Idx,
    /// CIFAR-10 binary batches `data_batch_{1..5}.bin` and `test_batch.bin`.
    Cifar10,
    /// Gaussian blobs generated from the init seed.
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub dir: Option<PathBuf>,
    /// Evaluate on a seeded subset of the test split.
    pub test_subset: Option<usize>,
    /// Per-sample variance after normalization; defaults to the network's `q_star`.
    pub target_variance: Option<f64>,
    pub blobs_per_class: usize,
    pub blobs_separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Idx,
            dir: None,
            test_subset: None,
            target_variance: None,
            blobs_per_class: 100,
            blobs_separation: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSplit {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Layers whose contribution maps are exported.
    pub map_layers: Vec<usize>,
    /// Evaluation-set indices for likelihood series and maps.
    pub samples: Vec<usize>,
    pub split: ProbeSplit,
    pub discriminability: DiscriminabilityOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            map_layers: vec![40],
            samples: vec![0],
            split: ProbeSplit::Test,
            discriminability: DiscriminabilityOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateConfig {
    pub samples: usize,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        PropagateConfig { samples: 1000 }
    }
}

/// One JSON document describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub probes: ProbeConfig,
    pub propagate: PropagateConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            probes: ProbeConfig::default(),
            propagate: PropagateConfig::default(),
            out_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    /// Parses a config document, or the `config` member of a manifest.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("manifest_version") => {
                map.remove("config").unwrap_or(serde_json::Value::Null)
            }
            other => other,
        };
        let cfg: RunConfig = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::InvalidConfig(format!("config field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if let Some(v) = self.data.target_variance {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("data.target_variance must be positive, got {v}")));
            }
        }
        if self.data.format == DataFormat::Cifar10 && self.network.data_width != crate::data::CIFAR_PIXELS {
            return Err(Error::InvalidConfig(format!(
                "cifar10 needs network.data_width = {}, got {}",
                crate::data::CIFAR_PIXELS,
                self.network.data_width
            )));
        }
        if self.data.format == DataFormat::Cifar10 && self.network.classes != 10 {
            return Err(Error::InvalidConfig(format!(
                "cifar10 needs network.classes = 10, got {}",
                self.network.classes
            )));
        }
        Ok(())
    }

    fn validate_probes(&self) -> Result<()> {
        if let Some(&l) = self.probes.map_layers.iter().find(|&&l| l == 0 || l > self.network.layers) {
            return Err(Error::InvalidConfig(format!(
                "probes.map_layers entry {l} outside 1..={}",
                self.network.layers
            )));
        }
        Ok(())
    }

    fn target_variance(&self) -> f64 {
        self.data.target_variance.unwrap_or(self.network.q_star)
    }
}

/// Checksummed output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub artifact_version: String,
    pub seeds: Seeds,
    pub config: RunConfig,
    /// Command-specific inputs that are not part of the config (calibration target, checkpoint).
    pub inputs: serde_json::Value,
    pub wall_clock_s: f64,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files in write order so the manifest inventory is stable.
struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Outputs> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes.as_ref()).map_err(|e| Error::io(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    /// Registers a file some other routine already wrote.
    fn record(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.retain(|f| f.file != name);
        self.files.push(OutputFile {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn finish(self, command: &str, config: &RunConfig, inputs: serde_json::Value, start: Instant) -> Result<()> {
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: Seeds {
                init: config.network.seed,
                shuffle: config.train.shuffle_seed,
            },
            config: config.clone(),
            inputs,
            wall_clock_s: start.elapsed().as_secs_f64(),
            outputs: self.files,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "iimlp", version, about = "Identity-initialized deep MLPs: theory checks, training and probes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find (sigma, q*) putting a target share of the Jacobian spectrum at the atom.
    Calibrate(CalibrateArgs),
    /// Monte-Carlo variance profile and Jacobian spectrum at initialization.
    Propagate(PropagateArgs),
    /// Train a network and write per-epoch metrics and checkpoints.
    Train(TrainArgs),
    /// Run the interpretability probes on a checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run config or a manifest from a previous run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Take sigma and q_star from a calibration.json.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub q_star: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 0.8)]
    pub target_mass: f64,
    #[arg(long, default_value_t = 100)]
    pub layers: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Identity,
    HeRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    HardTanh,
    Relu,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    #[arg(long, value_enum)]
    pub data_format: Option<DataFormat>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    pub train_subset: Option<usize>,
    #[arg(long)]
    pub test_subset: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Suppress the per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub data_format: Option<DataFormat>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// Layers to export contribution maps for (comma separated).
    #[arg(long = "map-layers", value_delimiter = ',')]
    pub map_layers: Option<Vec<usize>>,
    /// Evaluation-set indices for likelihood series and maps (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub split: Option<ProbeSplit>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub cosine: bool,
}

/// Error together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: Error,
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::InvalidConfig(_)
            | Error::Shape { .. }
            | Error::Unreachable { .. }
            | Error::Parse(_)
            | Error::Json(_)
            | Error::Io { .. }
            | Error::ZeroVariance(_)
            | Error::NotDiagonal { .. } => 2,
            Error::NoConvergence { .. } | Error::NonFinite { .. } | Error::Diverged { .. } => 1,
        };
        CliError { code, error }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &common.calibration {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cal: Calibration = serde_json::from_str(&text)?;
        cfg.network.sigma = cal.sigma;
        cfg.network.q_star = cal.q_star;
        cfg.network.layers = cal.layers;
    }
    if let Some(v) = &common.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = common.layers {
        cfg.network.layers = v;
    }
    if let Some(v) = common.sigma {
        cfg.network.sigma = v;
    }
    if let Some(v) = common.q_star {
        cfg.network.q_star = v;
    }
    if let Some(v) = common.seed {
        cfg.network.seed = v;
    }
    Ok(cfg)
}

fn apply_data_flags(cfg: &mut RunConfig, format: Option<DataFormat>, dir: &Option<PathBuf>, test_subset: Option<usize>) {
    if let Some(v) = format {
        cfg.data.format = v;
    }
    if let Some(v) = dir {
        cfg.data.dir = Some(v.clone());
    }
    if test_subset.is_some() {
        cfg.data.test_subset = test_subset;
    }
}

fn require_file(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::InvalidConfig(format!("dataset file not found: {}", path.display())))
    }
}

/// Loads, checks and normalizes the train and test splits named by the config.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match cfg.data.format {
        DataFormat::Blobs => {
            let rng = SeededRng::new(cfg.network.seed);
            let make = |stream, per_class| {
                synth_blobs(
                    cfg.network.classes,
                    cfg.network.data_width,
                    per_class,
                    cfg.data.blobs_separation,
                    &mut rng.fork(stream),
                )
            };
            // The same centers are needed for both splits, so the test split is the tail of one draw.
            let all = make(1, cfg.data.blobs_per_class * 2)?;
            let half = all.len() / 2;
            let idx: Vec<usize> = (0..all.len()).collect();
            (all.select(&idx[..half]), all.select(&idx[half..]))
        }
        DataFormat::Idx => {
            let dir = cfg
                .data
                .dir
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("data.dir is required for idx data".into()))?;
            let train = load_idx(
                require_file(dir.join("train-images-idx3-ubyte"))?,
                require_file(dir.join("train-labels-idx1-ubyte"))?,
            )?;
            let test = load_idx(
                require_file(dir.join("t10k-images-idx3-ubyte"))?,
                require_file(dir.join("t10k-labels-idx1-ubyte"))?,
            )?;
            (train, test)
        }
        DataFormat::Cifar10 => {
            let dir = cfg
                .data
                .dir
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("data.dir is required for cifar10 data".into()))?;
            let batches = (1..=5)
                .map(|k| require_file(dir.join(format!("data_batch_{k}.bin"))))
                .collect::<Result<Vec<_>>>()?;
            let train = load_cifar10(&batches)?;
            let test = load_cifar10(&[require_file(dir.join("test_batch.bin"))?])?;
            (train, test)
        }
    };
    for (role, ds) in [("train", &train), ("test", &test)] {
        if ds.width != cfg.network.data_width {
            return Err(Error::shape(
                format!("{role} data width vs network.data_width"),
                cfg.network.data_width,
                ds.width,
            ));
        }
        let max_label = ds.labels.iter().copied().max().unwrap_or(0);
        if max_label >= cfg.network.classes {
            return Err(Error::InvalidConfig(format!(
                "{role} labels reach {max_label} but network.classes = {}",
                cfg.network.classes
            )));
        }
    }
    let test = match cfg.data.test_subset {
        Some(n) => test.shuffled_take(n, cfg.train.shuffle_seed),
        None => test,
    };
    let train = match cfg.train.train_subset {
        Some(n) => train.shuffled_take(n, cfg.train.shuffle_seed),
        None => train,
    };
    let spec = NormalizationSpec::per_sample(cfg.target_variance());
    let mut train = normalize(&train, &spec)?;
    let mut test = normalize(&test, &spec)?;
    train.classes = cfg.network.classes;
    test.classes = cfg.network.classes;
    Ok((train, test))
}

fn build_network(cfg: &NetworkConfig) -> Result<InterpretableMLP> {
    match cfg.init {
        InitKind::Identity => InterpretableMLP::init_identity(cfg.clone()),
        InitKind::HeRandom => InterpretableMLP::init_he_random(cfg.clone(), &mut SeededRng::new(cfg.seed)),
    }
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<Calibration> {
    let start = Instant::now();
    let cal = calibrate(args.target_mass, args.layers)?;
    println!(
        "sigma = {}  q* = {}  mass_at_atom = {}  (target {}, L = {})",
        cal.sigma, cal.q_star, cal.mass_at_atom, cal.target_mass, cal.layers
    );
    let mut cfg = RunConfig::default();
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.network.sigma = cal.sigma;
    cfg.network.q_star = cal.q_star;
    cfg.network.layers = cal.layers;
    let mut out = Outputs::new(&cfg.out_dir)?;
    out.write("calibration.json", serde_json::to_string_pretty(&cal).map_err(Error::from)? + "\n")?;
    let inputs = serde_json::json!({ "target_mass": args.target_mass, "layers": args.layers });
    out.finish("calibrate", &cfg, inputs, start)?;
    Ok(cal)
}

pub fn cmd_propagate(args: &PropagateArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = base_config(&args.common)?;
    if let Some(v) = args.width {
        cfg.network.data_width = v;
    }
    if let Some(v) = args.samples {
        cfg.propagate.samples = v;
    }
    cfg.network.init = InitKind::Identity;
    cfg.validate()?;

    let net = &cfg.network;
    let rng = SeededRng::new(net.seed);
    let profile = monte_carlo_profile(net, &mut rng.fork(1), cfg.propagate.samples)?;
    let empirical = empirical_spectrum_at_init(net, &mut rng.fork(2), cfg.propagate.samples)?;
    let theory = theoretical_spectrum(net.sigma, net.layers, net.q_star);

    let mut out = Outputs::new(&cfg.out_dir)?;
    out.write("propagation_profile.csv", profile.to_csv())?;
    out.write("spectrum.csv", spectrum_csv(&theory, &empirical.summary))?;
    out.write("eigenvalues.csv", empirical.eigenvalues_csv())?;
    println!(
        "max relative variance drift {:.4}; atom mass empirical {:.4} vs theory {:.4}",
        profile.max_relative_drift(net.q_star),
        empirical.summary.mass_at_atom,
        theory.mass_at_atom
    );
    out.finish("propagate", &cfg, serde_json::Value::Null, start)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<Vec<EpochMetrics>> {
    let start = Instant::now();
    let mut cfg = base_config(&args.common)?;
    if let Some(v) = args.init {
        cfg.network.init = match v {
            InitArg::Identity => InitKind::Identity,
            InitArg::HeRandom => InitKind::HeRandom,
        };
    }
    if let Some(v) = args.activation {
        cfg.network.activation = match v {
            ActivationArg::HardTanh => Activation::HardTanh,
            ActivationArg::Relu => Activation::Relu,
        };
    }
    apply_data_flags(&mut cfg, args.data_format, &args.data_dir, args.test_subset);
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        t.momentum = v;
    }
    if let Some(v) = args.shuffle_seed {
        t.shuffle_seed = v;
    }
    if args.train_subset.is_some() {
        t.train_subset = args.train_subset;
    }
    if let Some(v) = args.snapshot_every {
        t.snapshot_every = v;
    }
    if args.grad_clip.is_some() {
        t.grad_clip = args.grad_clip;
    }
    cfg.validate()?;

    let (train_set, test_set) = load_datasets(&cfg)?;
    let mlp = build_network(&cfg.network)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    // The subset was already drawn while loading.
    let train_cfg = TrainConfig {
        train_subset: None,
        ..cfg.train.clone()
    };
    let quiet = args.quiet;
    let progress = move |m: &EpochMetrics| {
        if !quiet {
            println!(
                "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}  max|W-sI| {:.4}",
                m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.max_weight_deviation
            );
        }
    };
    let outcome = train(
        mlp,
        &train_set,
        &test_set,
        &train_cfg,
        TrainOutput {
            dir: Some(&cfg.out_dir),
            progress: Some(&progress),
        },
    )?;
    out.record("metrics.csv")?;
    for ckpt in &outcome.checkpoints {
        let name = ckpt.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        out.record(&name)?;
        let curve = name.replace("ckpt_epoch", "layer_accuracy_epoch").replace(".iimlp", ".csv");
        out.record(&curve)?;
    }
    let final_path = cfg.out_dir.join("final.iimlp");
    save_checkpoint(&outcome.mlp, &final_path)?;
    out.record("final.iimlp")?;
    out.write("weight_deviation.csv", weight_deviation_csv(&weight_deviation(&outcome.mlp)))?;
    let inputs = serde_json::json!({
        "train_samples": train_set.len(),
        "test_samples": test_set.len(),
    });
    out.finish("train", &cfg, inputs, start)?;
    Ok(outcome.metrics)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = base_config(&args.common)?;
    apply_data_flags(&mut cfg, args.data_format, &args.data_dir, args.test_subset);
    let mut mlp = load_checkpoint(&args.checkpoint)?;
    // The checkpoint is authoritative for the architecture.
    let stored = mlp.config().clone();
    cfg.network = NetworkConfig {
        seed: cfg.network.seed,
        last_layer_linear_head: cfg.network.last_layer_linear_head,
        ..stored
    };
    mlp.set_last_layer_linear_head(cfg.network.last_layer_linear_head);
    if let Some(v) = &args.map_layers {
        cfg.probes.map_layers = v.clone();
    }
    if let Some(v) = &args.samples {
        cfg.probes.samples = v.clone();
    }
    if let Some(v) = args.split {
        cfg.probes.split = v;
    }
    if args.max_samples.is_some() {
        cfg.probes.discriminability.max_samples = args.max_samples;
    }
    if args.cosine {
        cfg.probes.discriminability.correlation = crate::interpret::Correlation::Cosine;
    }
    cfg.probes.discriminability.subset_seed = cfg.train.shuffle_seed;
    cfg.validate()?;
    cfg.validate_probes()?;

    let (train_set, test_set) = load_datasets(&cfg)?;
    let eval = match cfg.probes.split {
        ProbeSplit::Train => &train_set,
        ProbeSplit::Test => &test_set,
    };
    if let Some(&s) = cfg.probes.samples.iter().find(|&&s| s >= eval.len()) {
        return Err(Error::InvalidConfig(format!(
            "probe sample {s} out of range for {} evaluation samples",
            eval.len()
        ))
        .into());
    }
    let layout = MapLayout::for_width(mlp.data_width());

    let mut out = Outputs::new(&cfg.out_dir)?;
    let curve = layerwise_accuracy(&mlp, eval);
    out.write("layer_accuracy.csv", curve.to_csv())?;
    let table = discriminability(&mlp, eval, &cfg.probes.discriminability);
    out.write("discriminability.csv", table.to_csv())?;
    for &s in &cfg.probes.samples {
        let trace = mlp.forward(&mlp.pad(&eval.samples[s])?);
        out.write(&format!("likelihood_{s}.csv"), likelihood_csv(&likelihood_series(&trace)))?;
        if let Some(layout) = layout {
            for &l in &cfg.probes.map_layers {
                let name = format!("map_s{s}_l{l}.{}", layout.extension());
                export_map_image(&contribution_map(&trace, l, s), layout, cfg.out_dir.join(&name))?;
                out.record(&name)?;
            }
        }
    }
    out.write("weight_deviation.csv", weight_deviation_csv(&weight_deviation(&mlp)))?;
    println!(
        "layer accuracy: l=0 {:.4}, l={} {:.4}",
        curve.accuracy[0],
        curve.layers(),
        curve.accuracy[curve.layers()]
    );
    let inputs = serde_json::json!({
        "checkpoint": args.checkpoint,
        "checkpoint_sha256": sha256_hex(&fs::read(&args.checkpoint).map_err(|e| Error::io(&args.checkpoint, e))?),
    });
    out.finish("analyze", &cfg, inputs, start)?;
    Ok(())
}

/// Caps matrix-multiply worker threads at `IIMLP_THREADS`, or at the available parallelism.
/// Results do not depend on the thread count.
fn configure_threads() -> std::result::Result<(), String> {
    let threads = match std::env::var("IIMLP_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| format!("IIMLP_THREADS must be a positive integer, got {v:?}"))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    std::env::set_var("MATMUL_NUM_THREADS", threads.to_string());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| ()),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.error);
            e.code
        }
    }
}

pub fn main_from_env() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
