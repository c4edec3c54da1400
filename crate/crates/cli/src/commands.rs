//! The five subcommands. Each reads and writes inside the config's
//! `out_dir` and can be driven as a library call.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use guifl_core::episodes::{clean, load_episodes, AssumePresent, Episode, FsResolver, ImageResolver, NA};
use guifl_core::eval::{evaluate, toy_predictions, EvalReport, PredictionRecord};
use guifl_core::fl::{run_rounds, CommLedger, EpisodeIndex, FlError, ParamVector, RoundLog, RunOptions, ServerState};
use guifl_core::local_train::{gen_synthetic, ToyModel, ToyTrainer};
use guifl_core::partition::{compose_full, partition, partition_stats, write_stats_csv, PartitionManifest};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    read_json, read_jsonl, sha256_file, sha256_hex, write_atomic, write_json, write_jsonl, RunDir, Stamped,
};
use crate::config::{PartitionPlan, Resolved, RunConfig};
use crate::CliError;

/// A loaded config with its resolved form and hash.
pub struct Ctx {
    pub cfg: RunConfig,
    pub resolved: Resolved,
    pub config_hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let resolved = cfg.resolve()?;
        let json = serde_json::to_vec(&resolved).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Ctx { cfg, resolved, config_hash: sha256_hex(&json) })
    }

    pub fn run_dir(&self) -> RunDir {
        RunDir(self.cfg.out_dir.clone())
    }

    fn stamp<T>(&self, corpus_hash: &str, data: T) -> Stamped<T> {
        Stamped { config_hash: self.config_hash.clone(), corpus_hash: corpus_hash.to_string(), data }
    }

    fn corpus_hash(&self) -> Result<String, CliError> {
        corpus_hash(&self.cfg.corpus_path())
    }

    fn check_stamp<T>(&self, s: &Stamped<T>, what: &Path) -> Result<(), CliError> {
        if s.config_hash != self.config_hash {
            return Err(CliError::Data(format!(
                "{} was written under a different config; rerun the earlier stage",
                what.display()
            )));
        }
        Ok(())
    }
}

/// Hash of a corpus file, or of every `*.jsonl` file (name and bytes) in a
/// corpus directory.
pub fn corpus_hash(path: &Path) -> Result<String, CliError> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let read_err = |e: std::io::Error| CliError::Data(format!("cannot read {}: {e}", path.display()));
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(read_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut acc = Vec::new();
    for f in files {
        acc.extend_from_slice(f.file_name().unwrap_or_default().as_encoded_bytes());
        acc.push(0);
        acc.extend_from_slice(sha256_file(&f)?.as_bytes());
    }
    Ok(sha256_hex(&acc))
}

/// Provenance index covering every artifact in a run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub config_hash: String,
    pub corpus_hash: String,
    /// File name (relative to the run directory) to sha256.
    pub files: BTreeMap<String, String>,
}

const INDEX_FILE: &str = "artifacts.json";

fn record_artifacts(ctx: &Ctx, corpus_hash: &str, names: &[String]) -> Result<(), CliError> {
    let dir = ctx.run_dir();
    let path = dir.file(INDEX_FILE);
    let mut index: ArtifactIndex = read_json(&path).unwrap_or_default();
    if index.config_hash != ctx.config_hash || index.corpus_hash != corpus_hash {
        index = ArtifactIndex {
            config_hash: ctx.config_hash.clone(),
            corpus_hash: corpus_hash.to_string(),
            files: BTreeMap::new(),
        };
    }
    for name in names {
        index.files.insert(name.clone(), sha256_file(&dir.file(name))?);
    }
    write_json(&path, &index)
}

fn rel(ctx: &Ctx, p: &Path) -> String {
    p.strip_prefix(&ctx.cfg.out_dir).unwrap_or(p).to_string_lossy().into_owned()
}

/// Generates the synthetic corpus at the configured corpus path.
pub fn cmd_synth(ctx: &Ctx) -> Result<PathBuf, CliError> {
    let spec = ctx.resolved.synth.as_ref().ok_or_else(|| CliError::Config("no [synth] section".into()))?;
    let episodes = gen_synthetic(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let path = ctx.cfg.corpus_path();
    write_jsonl(&path, &episodes)?;
    Ok(path)
}

/// Loads and cleans the corpus, carves the test split and partitions the
/// training split among clients.
pub fn cmd_partition(ctx: &Ctx) -> Result<PartitionManifest, CliError> {
    let corpus = ctx.cfg.corpus_path();
    let corpus_hash = ctx.corpus_hash()?;
    let loaded = load_episodes(&corpus).map_err(|e| CliError::Data(e.to_string()))?;
    let resolver: Box<dyn ImageResolver> = match &ctx.cfg.image_root {
        Some(root) => Box::new(FsResolver { root: root.clone() }),
        None => Box::new(AssumePresent),
    };
    let cleaned = clean(loaded.episodes, resolver.as_ref());
    let dir = ctx.run_dir();
    let mut report = loaded.rejections;
    report.extend(cleaned.rejected);
    report.extend(cleaned.collapsed);
    write_jsonl(&dir.clean_report(), &report)?;
    if cleaned.kept.is_empty() {
        return Err(CliError::Data(format!("no usable episodes in {}", corpus.display())));
    }

    let axis = ctx.resolved.test_axis;
    let (test, train) = guifl_core::episodes::carve_test_sets(
        cleaned.kept,
        |e| axis.value_of(e).unwrap_or_else(|| NA.to_string()),
        ctx.resolved.test_per_group,
        ctx.resolved.test_seed,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    write_jsonl(&dir.train(), &train)?;
    write_jsonl(&dir.test(), &test)?;

    let manifest = match &ctx.resolved.partition {
        PartitionPlan::Scheme(spec) => partition(&train, spec),
        PartitionPlan::Full { variant, num_clients, seed } => compose_full(&train, *variant, *num_clients, *seed),
    }
    .map_err(|e| CliError::Data(e.to_string()))?;
    write_json(&dir.manifest(), &ctx.stamp(&corpus_hash, &manifest))?;
    let mut csv = Vec::new();
    write_stats_csv(&mut csv, &partition_stats(&manifest)).map_err(|e| CliError::Run(e.to_string()))?;
    write_atomic(&dir.stats(), &csv)?;

    let names: Vec<String> =
        [dir.clean_report(), dir.train(), dir.test(), dir.manifest(), dir.stats()].iter().map(|p| rel(ctx, p)).collect();
    record_artifacts(ctx, &corpus_hash, &names)?;
    Ok(manifest)
}

/// One line of `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLine {
    pub config_hash: String,
    #[serde(flatten)]
    pub log: RoundLog,
}

fn fl_error(e: FlError) -> CliError {
    match e {
        FlError::InvalidConfig(_) | FlError::InsufficientClients { .. } => CliError::Config(e.to_string()),
        FlError::UnknownEpisode(_) | FlError::EmptyShard(_) => CliError::Data(e.to_string()),
        other => CliError::Run(other.to_string()),
    }
}

/// Runs the federated rounds. With `resume`, training continues from that
/// checkpoint and round logs past it are discarded.
pub fn cmd_train(ctx: &Ctx, resume: Option<&Path>) -> Result<ServerState, CliError> {
    let dir = ctx.run_dir();
    let corpus_hash = ctx.corpus_hash()?;
    let manifest: Stamped<PartitionManifest> = read_json(&dir.manifest())?;
    ctx.check_stamp(&manifest, &dir.manifest())?;
    let manifest = manifest.data;
    let train = load_episodes(&dir.train()).map_err(|e| CliError::Data(e.to_string()))?.episodes;

    let t = &ctx.resolved.trainer;
    let trainer = ToyTrainer {
        feature_dim: t.feature_dim,
        local_epochs: t.local_epochs,
        batch_size: t.batch_size,
        client_lr: t.client_lr,
    };
    let dim = ToyModel::param_count(t.feature_dim);
    let (mut state, mut lines) = match resume {
        Some(path) => {
            let ckpt: Stamped<ServerState> = read_json(path)?;
            ctx.check_stamp(&ckpt, path)?;
            if ckpt.data.dim() != dim {
                return Err(CliError::Data(format!("checkpoint has {} parameters, expected {dim}", ckpt.data.dim())));
            }
            let round = ckpt.data.round;
            let mut lines: Vec<RoundLine> =
                if dir.rounds().exists() { read_jsonl(&dir.rounds())? } else { Vec::new() };
            lines.retain(|l| l.config_hash == ctx.config_hash && l.log.round <= round);
            (ckpt.data, lines)
        }
        None => (ServerState::new(ParamVector::zeros(dim), ctx.resolved.algo), Vec::new()),
    };

    let c = &ctx.resolved.comm;
    let opts = RunOptions {
        payload: c.payload,
        adapter_dim: c.adapter_dim,
        bytes_per_param: c.bytes_per_param,
        record_wall_time: ctx.resolved.record_wall_time,
    };
    let index = EpisodeIndex::new(&train);
    let rc = &ctx.resolved.round;
    let mut written = vec![rel(ctx, &dir.rounds()), rel(ctx, &dir.checkpoint()), rel(ctx, &dir.ledger())];
    run_rounds::<CliError>(&mut state, &manifest, &index, &trainer, rc, &opts, |s, log| {
        lines.push(RoundLine { config_hash: ctx.config_hash.clone(), log: log.clone() });
        let ckpt = dir.round_checkpoint(s.round);
        write_json(&ckpt, &ctx.stamp(&corpus_hash, s))?;
        written.push(rel(ctx, &ckpt));
        write_jsonl(&dir.rounds(), &lines)
    })?;
    write_jsonl(&dir.rounds(), &lines)?;
    write_json(&dir.checkpoint(), &ctx.stamp(&corpus_hash, &state))?;
    let ledger = CommLedger::new(
        dim as u64,
        c.adapter_dim,
        c.bytes_per_param,
        rc.total_rounds,
        rc.clients_per_round as u64,
        state.algo.name,
    )
    .map_err(fl_error)?;
    write_json(&dir.ledger(), &ctx.stamp(&corpus_hash, &ledger))?;
    record_artifacts(ctx, &corpus_hash, &written)?;
    Ok(state)
}

impl From<FlError> for CliError {
    fn from(e: FlError) -> Self {
        fl_error(e)
    }
}

/// Labels attached to a report for cross-run tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub distribution: String,
    pub algorithm: String,
    pub report: EvalReport,
}

/// Scores the final checkpoint on the test split, or replays an external
/// prediction file instead of running the model.
pub fn cmd_evaluate(ctx: &Ctx, predictions: Option<&Path>) -> Result<EvalReport, CliError> {
    let dir = ctx.run_dir();
    let corpus_hash = ctx.corpus_hash()?;
    let test = load_episodes(&dir.test()).map_err(|e| CliError::Data(e.to_string()))?.episodes;
    let preds: Vec<PredictionRecord> = match predictions {
        Some(path) => read_jsonl(path)?,
        None => {
            let ckpt: Stamped<ServerState> = read_json(&dir.checkpoint())?;
            ctx.check_stamp(&ckpt, &dir.checkpoint())?;
            let model = ToyModel::from_params(ckpt.data.params).map_err(|e| CliError::Data(e.to_string()))?;
            toy_predictions(&model, &test)
        }
    };
    write_jsonl(&dir.predictions(), &preds)?;
    let report = evaluate(&preds, &test, ctx.resolved.eval_space.policy()).map_err(|e| CliError::Data(e.to_string()))?;
    let body = ReportBody {
        distribution: ctx.resolved.partition.label(),
        algorithm: ctx.resolved.algo.name.name().to_string(),
        report,
    };
    write_json(&dir.report_json(), &ctx.stamp(&corpus_hash, &body))?;
    let mut csv = Vec::new();
    body.report.write_csv(&mut csv).map_err(|e| CliError::Run(e.to_string()))?;
    write_atomic(&dir.report_csv(), &csv)?;
    let names = [dir.predictions(), dir.report_json(), dir.report_csv()].map(|p| rel(ctx, &p));
    record_artifacts(ctx, &corpus_hash, &names)?;
    Ok(body.report)
}

/// Merges the reports of finished runs into one CSV table with a row per
/// (run, group). `group` keeps only that group.
pub fn cmd_report(run_dirs: &[PathBuf], group: Option<&str>) -> Result<String, CliError> {
    let mut runs = Vec::with_capacity(run_dirs.len());
    for d in run_dirs {
        let path = RunDir(d.clone()).report_json();
        if !path.is_file() {
            return Err(CliError::IncompleteRun { dir: d.clone(), missing: "report.json".into() });
        }
        let r: Stamped<ReportBody> = read_json(&path)?;
        if let Some((first, _)) = runs.first() {
            let first: &Stamped<ReportBody> = first;
            if first.corpus_hash != r.corpus_hash {
                return Err(CliError::CorpusMismatch {
                    first: first.corpus_hash.clone(),
                    other: r.corpus_hash.clone(),
                    dir: d.clone(),
                });
            }
        }
        runs.push((r, d));
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Run(e.to_string());
    out.write_record(["distribution", "algorithm", "group", "type_acc", "ground_acc", "sr", "n_steps"])
        .map_err(csv_err)?;
    for (r, _) in &runs {
        for (g, s) in &r.data.report.groups {
            if group.is_some_and(|want| want != g) {
                continue;
            }
            let ground = s.ground_acc.map_or_else(|| NA.to_string(), |v| format!("{v:.6}"));
            out.write_record([
                r.data.distribution.as_str(),
                r.data.algorithm.as_str(),
                g,
                &format!("{:.6}", s.type_acc),
                &ground,
                &format!("{:.6}", s.sr),
                &s.n_steps.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = out.into_inner().map_err(|e| CliError::Run(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Run(e.to_string()))
}

/// Gold actions rendered as predictions, for replay checks.
pub fn gold_predictions(episodes: &[Episode]) -> Vec<PredictionRecord> {
    episodes
        .iter()
        .flat_map(|e| {
            e.steps.iter().map(move |s| PredictionRecord {
                episode_id: e.episode_id.clone(),
                step_index: s.index,
                predicted: guifl_core::serialize_action(&s.action),
            })
        })
        .collect()
}
