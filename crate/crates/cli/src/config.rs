//! Run configuration: a TOML document whose every field has a default.

use std::path::{Path, PathBuf};

use guifl_core::episodes::DEFAULT_TEST_SIZE;
use guifl_core::eval::SpacePolicy;
use guifl_core::fl::{AlgoConfig, Algorithm, Payload, Preconditioner, RoundConfig, Weighting};
use guifl_core::local_train::{SynthSpec, DEFAULT_FEATURE_DIM};
use guifl_core::partition::{Axis, FullVariant, PartitionSpec, Scheme};
use guifl_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/corpus.jsonl`.
    pub corpus_path: Option<PathBuf>,
    /// Screenshot root; when absent, image references are not checked.
    pub image_root: Option<PathBuf>,
    #[serde(default = "default_test_size")]
    pub test_per_group: usize,
    #[serde(default = "default_test_axis")]
    pub test_axis: Axis,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub round: RoundSection,
    #[serde(default)]
    pub algo: AlgoSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub comm: CommSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

fn default_test_axis() -> Axis {
    Axis::Source
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub axis: Axis,
    pub scheme: Scheme,
    /// When set, `axis` and `scheme` are ignored.
    pub variant: Option<FullVariant>,
    pub num_clients: usize,
    pub alpha: f64,
    pub excluded_per_client: usize,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            axis: Axis::Platform,
            scheme: Scheme::Iid,
            variant: None,
            num_clients: 15,
            alpha: 1.0,
            excluded_per_client: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundSection {
    pub total_rounds: u64,
    pub clients_per_round: usize,
    pub data_fraction: f64,
    pub weighting: Weighting,
    pub record_wall_time: bool,
}

impl Default for RoundSection {
    fn default() -> Self {
        let rc = RoundConfig::default();
        RoundSection {
            total_rounds: rc.total_rounds,
            clients_per_round: rc.clients_per_round,
            data_fraction: rc.data_fraction,
            weighting: rc.weighting,
            record_wall_time: false,
        }
    }
}

/// Algorithm name plus optional overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoSection {
    pub name: Algorithm,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub server_lr: Option<f64>,
    pub tau: Option<f64>,
    pub mu: Option<f64>,
    pub momentum_mix: Option<f64>,
    pub preconditioner: Option<Preconditioner>,
}

impl Default for AlgoSection {
    fn default() -> Self {
        AlgoSection {
            name: Algorithm::FedAvg,
            beta1: None,
            beta2: None,
            server_lr: None,
            tau: None,
            mu: None,
            momentum_mix: None,
            preconditioner: None,
        }
    }
}

impl AlgoSection {
    pub fn resolve(&self) -> AlgoConfig {
        let mut a = AlgoConfig::new(self.name);
        a.beta1 = self.beta1.unwrap_or(a.beta1);
        a.beta2 = self.beta2.unwrap_or(a.beta2);
        a.server_lr = self.server_lr.unwrap_or(a.server_lr);
        a.tau = self.tau.unwrap_or(a.tau);
        a.mu = self.mu.unwrap_or(a.mu);
        a.momentum_mix = self.momentum_mix.unwrap_or(a.momentum_mix);
        a.preconditioner = self.preconditioner.unwrap_or(a.preconditioner);
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub feature_dim: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection { local_epochs: 1, batch_size: 4, client_lr: 5e-5, feature_dim: DEFAULT_FEATURE_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_values: usize,
    pub episodes_per_value: usize,
    pub label_noise: f64,
    pub separation: f64,
    pub axis: Axis,
    /// Defaults to the trainer's feature dimension.
    pub feature_dim: Option<usize>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            num_values: 3,
            episodes_per_value: 200,
            label_noise: 0.05,
            separation: 4.0,
            axis: Axis::Platform,
            feature_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommSection {
    pub payload: Payload,
    pub adapter_dim: u64,
    pub bytes_per_param: u64,
}

impl Default for CommSection {
    fn default() -> Self {
        CommSection { payload: Payload::Full, adapter_dim: 0, bytes_per_param: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub space: SpaceMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { space: SpaceMode::Fixed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMode {
    Fixed,
    PerStep,
}

impl SpaceMode {
    pub fn policy(self) -> SpacePolicy {
        match self {
            SpaceMode::Fixed => SpacePolicy::default(),
            SpaceMode::PerStep => SpacePolicy::PerStep,
        }
    }
}

/// How the training split is divided among clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionPlan {
    Scheme(PartitionSpec),
    Full { variant: FullVariant, num_clients: usize, seed: u64 },
}

impl PartitionPlan {
    /// Short label used in comparison tables.
    pub fn label(&self) -> String {
        match self {
            PartitionPlan::Scheme(s) => format!("{}_{}", s.axis.name(), scheme_name(s.scheme)),
            PartitionPlan::Full { variant, .. } => {
                serde_json::to_value(variant).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            }
        }
    }

    pub fn num_clients(&self) -> usize {
        match self {
            PartitionPlan::Scheme(s) => s.num_clients,
            PartitionPlan::Full { num_clients, .. } => *num_clients,
        }
    }
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Iid => "IID",
        Scheme::NonUniform => "NON_UNIFORM",
        Scheme::Partial => "PARTIAL",
        Scheme::Skew => "SKEW",
    }
}

/// The experiment-defining part of a config with every seed derived. Paths
/// are left out so identical experiments in different directories hash
/// alike.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub master_seed: u64,
    pub check_images: bool,
    pub test_per_group: usize,
    pub test_axis: Axis,
    pub test_seed: u64,
    pub partition: PartitionPlan,
    pub round: RoundConfig,
    pub record_wall_time: bool,
    pub algo: AlgoConfig,
    pub trainer: TrainerSection,
    pub synth: Option<SynthSpec>,
    pub comm: CommSection,
    pub eval_space: SpaceMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus_path.clone().unwrap_or_else(|| self.out_dir.join("corpus.jsonl"))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let seed = |label: &str| derive_seed(self.master_seed, label, &[]);
        let p = &self.partition;
        let partition = match p.variant {
            Some(variant) => PartitionPlan::Full { variant, num_clients: p.num_clients, seed: seed("partition") },
            None => PartitionPlan::Scheme(PartitionSpec {
                axis: p.axis,
                scheme: p.scheme,
                num_clients: p.num_clients,
                alpha: p.alpha,
                excluded_per_client: p.excluded_per_client,
                seed: seed("partition"),
            }),
        };
        let r = &self.round;
        let round = RoundConfig {
            total_rounds: r.total_rounds,
            clients_per_round: r.clients_per_round,
            data_fraction: r.data_fraction,
            seed: seed("rounds"),
            weighting: r.weighting,
        };
        let algo = self.algo.resolve();
        algo.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let t = &self.trainer;
        if t.local_epochs == 0 || t.batch_size == 0 || t.feature_dim == 0 || !(t.client_lr >= 0.0) {
            return Err(CliError::Config("trainer fields must be positive".into()));
        }
        if !(r.data_fraction > 0.0 && r.data_fraction <= 1.0) || r.clients_per_round == 0 {
            return Err(CliError::Config("round.data_fraction must lie in (0, 1], clients_per_round ≥ 1".into()));
        }
        if ![2, 4, 8].contains(&self.comm.bytes_per_param) {
            return Err(CliError::Config("comm.bytes_per_param must be 2, 4 or 8".into()));
        }
        let synth = self.synth.as_ref().map(|s| SynthSpec {
            num_values: s.num_values,
            episodes_per_value: s.episodes_per_value,
            feature_dim: s.feature_dim.unwrap_or(t.feature_dim),
            label_noise: s.label_noise,
            separation: s.separation,
            seed: seed("synth"),
            axis: s.axis,
        });
        if let Some(s) = &synth {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(Resolved {
            master_seed: self.master_seed,
            check_images: self.image_root.is_some(),
            test_per_group: self.test_per_group,
            test_axis: self.test_axis,
            test_seed: seed("test-split"),
            partition,
            round,
            record_wall_time: r.record_wall_time,
            algo,
            trainer: t.clone(),
            synth,
            comm: self.comm.clone(),
            eval_space: self.eval.space,
        })
    }
}
