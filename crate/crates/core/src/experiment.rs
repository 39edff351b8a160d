//! End-to-end experiment: data, pretrained base, partition, federated run
//! and the files written for it.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatorSpec;
use crate::data::{Dataset, Domain, SyntheticTask};
use crate::diagnostics::{rounds_to_target, write_update_dump, MetricsWriter, RoundMetrics};
use crate::error::{Error, Result};
use crate::federation::{self, dirichlet_partition_indices, FederatedSetup, FederationConfig};
use crate::model::{
    init_adapters, load_checkpoint, pretrain, save_checkpoint, Checkpoint, DenseLayer, ModelConfig,
    PretrainConfig,
};
use crate::rng::derive_seed;

const STREAM_PRETRAIN: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_ADAPTERS: u64 = 4;
const STREAM_SOURCE: u64 = 5;
const STREAM_TARGET: u64 = 6;
const STREAM_CLIENTS: u64 = 7;

/// Architecture knobs; input and output sizes come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub rank: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            rank: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// Source (pretraining) and target (federated) samples from a
    /// [`SyntheticTask`].
    Synthetic {
        #[serde(default)]
        task: SyntheticTask,
        #[serde(default = "default_source_samples")]
        source_samples: usize,
        #[serde(default = "default_target_samples")]
        target_samples: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Feature files hold one example per row; label files one integer per line.
    Files {
        source_features: PathBuf,
        source_labels: PathBuf,
        target_features: PathBuf,
        target_labels: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_source_samples() -> usize {
    4000
}
fn default_target_samples() -> usize {
    20000
}
fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            task: SyntheticTask::default(),
            source_samples: default_source_samples(),
            target_samples: default_target_samples(),
            test_fraction: default_test_fraction(),
        }
    }
}

impl DataConfig {
    pub fn test_fraction(&self) -> f64 {
        match *self {
            DataConfig::Synthetic { test_fraction, .. } | DataConfig::Files { test_fraction, .. } => test_fraction,
        }
    }

    fn validate(&self) -> Result<()> {
        let tf = self.test_fraction();
        if !(tf > 0.0 && tf < 1.0) {
            return Err(Error::Config(format!("data.test_fraction must lie in (0, 1), got {tf}")));
        }
        if let DataConfig::Synthetic { task, source_samples, target_samples, .. } = self {
            task.validate().map_err(|e| Error::Config(format!("data.task: {e}")))?;
            if *source_samples == 0 || *target_samples == 0 {
                return Err(Error::Config("data.source_samples and data.target_samples must be positive".into()));
            }
        }
        Ok(())
    }

    fn load(&self, domain: Domain, seed: u64) -> Result<Dataset> {
        match self {
            DataConfig::Synthetic { task, source_samples, target_samples, .. } => match domain {
                Domain::Source => task.sample(domain, *source_samples, derive_seed(seed, &[STREAM_SOURCE])),
                Domain::Target => task.sample(domain, *target_samples, derive_seed(seed, &[STREAM_TARGET])),
            },
            DataConfig::Files {
                source_features,
                source_labels,
                target_features,
                target_labels,
                ..
            } => match domain {
                Domain::Source => Dataset::load(source_features, source_labels),
                Domain::Target => Dataset::load(target_features, target_labels),
            },
        }
    }

    /// Pretraining data.
    pub fn source(&self, seed: u64) -> Result<Dataset> {
        self.load(Domain::Source, seed)
    }

    /// Fine-tuning data, before the train / test split.
    pub fn target(&self, seed: u64) -> Result<Dataset> {
        self.load(Domain::Target, seed)
    }
}

/// Complete description of an experiment.
///
/// Every table is optional and falls back to its defaults; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. If absent: `FEDLAB_SEED`, then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Load the frozen base from this checkpoint instead of pretraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Write every client's delta of this round under `updates/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_updates_round: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub aggregator: AggregatorSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("fedlab-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: default_output_dir(),
            checkpoint: None,
            dump_updates_round: None,
            model: ModelSection::default(),
            pretrain: PretrainConfig::default(),
            data: DataConfig::default(),
            federation: FederationConfig::default(),
            aggregator: AggregatorSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The seed actually used: `seed`, else `FEDLAB_SEED`, else 0.
    pub fn effective_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("FEDLAB_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("FEDLAB_SEED must be an unsigned integer, got {v:?}"))),
            Err(_) => Ok(0),
        }
    }

    /// Fixes the seed so the config can be dumped and replayed verbatim.
    pub fn resolve(mut self) -> Result<Self> {
        let seed = self.effective_seed()?;
        self.seed = Some(seed);
        self.federation.seed = derive_seed(seed, &[STREAM_CLIENTS]);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.pretrain.batch_size == 0 || !(self.pretrain.lr >= 0.0) || !(self.pretrain.weight_decay >= 0.0) {
            return Err(Error::Config(
                "pretrain.batch_size must be positive and pretrain.lr, pretrain.weight_decay nonnegative".into(),
            ));
        }
        self.federation.validate()?;
        self.aggregator.validate()
    }

    /// Model shape for data with `input_dim` features and `num_classes` labels.
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            input_dim,
            num_classes,
            hidden_dims: self.model.hidden_dims.clone(),
            rank: self.model.rank,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn class_count(data: &[&Dataset]) -> usize {
    data.iter().map(|d| d.num_classes()).max().unwrap_or(0)
}

fn num_classes(cfg: &RunConfig, seen: usize) -> usize {
    match &cfg.data {
        DataConfig::Synthetic { task, .. } => task.num_classes,
        DataConfig::Files { .. } => seen,
    }
}

/// Pretrains the frozen base on the source data.
pub fn pretrain_base(cfg: &RunConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let seed = cfg.effective_seed()?;
    let source = cfg.data.source(seed)?;
    let target_classes = match &cfg.data {
        DataConfig::Synthetic { .. } => 0,
        DataConfig::Files { .. } => cfg.data.target(seed)?.num_classes(),
    };
    let classes = num_classes(cfg, class_count(&[&source]).max(target_classes));
    let model = cfg.model_config(source.input_dim(), classes)?;
    info!("pretraining {:?} on {} source examples", model.layer_shapes(), source.len());
    let layers = pretrain(&source, &model, &cfg.pretrain, derive_seed(seed, &[STREAM_PRETRAIN]))?;
    Ok(Checkpoint {
        config: model,
        layers,
        adapters: None,
    })
}

/// Writes the pretrained base to `output_dir/pretrained` and returns that path.
pub fn run_pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    let ckpt = pretrain_base(cfg)?;
    let dir = cfg.output_dir.join("pretrained");
    save_checkpoint(&dir, &ckpt)?;
    Ok(dir)
}

fn base_model(cfg: &RunConfig, target: &Dataset) -> Result<(ModelConfig, Vec<DenseLayer>)> {
    match &cfg.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let want = cfg.model_config(target.input_dim(), ckpt.config.num_classes)?;
            if ckpt.config != want {
                return Err(Error::Config(format!(
                    "checkpoint {} has model {:?}, config asks for {:?}",
                    path.display(),
                    ckpt.config,
                    want
                )));
            }
            if target.num_classes() > want.num_classes {
                return Err(Error::Config(format!(
                    "target data has {} classes, checkpoint only {}",
                    target.num_classes(),
                    want.num_classes
                )));
            }
            Ok((ckpt.config, ckpt.layers))
        }
        None => {
            let ckpt = pretrain_base(cfg)?;
            if ckpt.config.input_dim != target.input_dim() || target.num_classes() > ckpt.config.num_classes {
                return Err(Error::Config("source and target data have incompatible shapes".into()));
            }
            Ok((ckpt.config, ckpt.layers))
        }
    }
}

/// Everything needed to start the rounds, plus the client index lists.
pub struct Prepared {
    pub model: ModelConfig,
    pub setup: FederatedSetup,
    pub partition: federation::Partition,
}

/// Base model, held-out test split, non-IID client shards and fresh adapters.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seed = cfg.effective_seed()?;
    let target = cfg.data.target(seed)?;
    let (model, layers) = base_model(cfg, &target)?;
    let (train, test) = target.split(cfg.data.test_fraction(), derive_seed(seed, &[STREAM_SPLIT]))?;
    let partition = dirichlet_partition_indices(
        &train.labels,
        cfg.federation.num_clients,
        cfg.federation.dirichlet_alpha,
        derive_seed(seed, &[STREAM_PARTITION]),
    )?;
    let adapters = init_adapters(&model, derive_seed(seed, &[STREAM_ADAPTERS]))?;
    Ok(Prepared {
        setup: FederatedSetup {
            layers,
            adapters,
            clients: partition.materialize(&train),
            test,
        },
        model,
        partition,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub initial: RoundMetrics,
    pub rounds: Vec<RoundMetrics>,
    pub final_accuracy: f64,
    /// First round reaching 90% test accuracy.
    pub r90: Option<i64>,
    pub metrics_path: PathBuf,
}

/// Runs the experiment and writes into `output_dir`:
///
/// * `config.toml`: the resolved config,
/// * `partition.txt`: client index lists,
/// * `metrics.csv` and `rpca_trace.csv`, streamed round by round,
/// * `checkpoint/`: base layers and final global adapters,
/// * `updates/client_<id>/`: client deltas of `dump_updates_round`, if set.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput> {
    let cfg = cfg.clone().resolve()?;
    let prepared = prepare(&cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    prepared.partition.write_manifest(out.join("partition.txt"))?;

    let metrics_path = out.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path)?;
    writer.append(&federation::initial_metrics(&prepared.setup, &cfg.aggregator)?)?;
    let dump_dir = out.join("updates");
    let dump_round = cfg.dump_updates_round;
    let layers = prepared.setup.layers.clone();
    let result = federation::run(&cfg.federation, &cfg.aggregator, prepared.setup, |outcome| {
        writer.append(&outcome.metrics)?;
        if dump_round.is_some_and(|r| r as i64 == outcome.metrics.round) {
            write_update_dump(&dump_dir, &outcome.updates)?;
        }
        info!(
            "round {} accuracy {:.4} loss {:.4}",
            outcome.metrics.round, outcome.metrics.test_accuracy, outcome.metrics.test_loss
        );
        Ok(())
    })?;
    writer.flush()?;

    save_checkpoint(
        out.join("checkpoint"),
        &Checkpoint {
            config: prepared.model,
            layers,
            adapters: Some(result.server.adapters.clone()),
        },
    )?;
    let final_accuracy = result.rounds.last().unwrap_or(&result.initial).test_accuracy;
    Ok(ExperimentOutput {
        r90: rounds_to_target(&result.rounds, 0.9),
        final_accuracy,
        initial: result.initial,
        rounds: result.rounds,
        metrics_path,
    })
}

/// The standard synthetic benchmark: 8-class shifted-Gaussian task (4000
/// source, 20000 target examples), 20 clients with Dirichlet(0.1) label
/// skew, rank-4 adapters on a 16-32-8 MLP, 60 rounds of one local AdamW
/// epoch at lr 1e-4.
pub fn benchmark_config() -> RunConfig {
    RunConfig {
        seed: Some(0),
        output_dir: PathBuf::from("fedlab-out/benchmark"),
        federation: FederationConfig {
            num_clients: 20,
            dirichlet_alpha: 0.1,
            rounds: 60,
            ..FederationConfig::default()
        },
        ..RunConfig::default()
    }
}
