//! Experiment orchestration: build a session stream, drive a learner through
//! it, record accuracy curves and the memory ledger, reduce to omega metrics,
//! and persist one JSON record per run.

pub mod plots;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_dataset_dir, make_class_incremental_stream, make_multimodal_stream,
    make_permutation_stream, stream_class_count, ClassOrder, Dataset, StudySession,
};
use crate::error::{Error, Result};
use crate::ewc::{EwcLearner, EwcSettings};
use crate::fel::{FelLearner, FelSettings};
use crate::geppnet::{GeppNetLearner, GeppNetSettings};
use crate::learner::{
    mean_per_class_accuracy, train_offline_ideal, Learner, MlpLearner, MlpSettings,
};
use crate::metrics::MetricsReport;
use crate::nncore::OptimKind;
use crate::pathnet::{PathNetLearner, PathNetSettings};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Permutation,
    IncrementalClass,
    Multimodal,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Permutation => "permutation",
            Protocol::IncrementalClass => "incremental-class",
            Protocol::Multimodal => "multimodal",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permutation" => Ok(Protocol::Permutation),
            "incremental-class" => Ok(Protocol::IncrementalClass),
            "multimodal" => Ok(Protocol::Multimodal),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Mlp,
    Ewc,
    Pathnet,
    Geppnet,
    GeppnetStm,
    Fel,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Mlp => "mlp",
            ModelId::Ewc => "ewc",
            ModelId::Pathnet => "pathnet",
            ModelId::Geppnet => "geppnet",
            ModelId::GeppnetStm => "geppnet-stm",
            ModelId::Fel => "fel",
        }
    }

    pub fn all() -> [ModelId; 6] {
        [
            ModelId::Mlp,
            ModelId::Ewc,
            ModelId::Pathnet,
            ModelId::Geppnet,
            ModelId::GeppnetStm,
            ModelId::Fel,
        ]
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelId::Mlp),
            "ewc" => Ok(ModelId::Ewc),
            "pathnet" => Ok(ModelId::Pathnet),
            "geppnet" => Ok(ModelId::Geppnet),
            "geppnet-stm" => Ok(ModelId::GeppnetStm),
            "fel" => Ok(ModelId::Fel),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Per-model hyperparameter overrides; unset fields keep each model's
/// defaults. Flat on purpose so a JSON config file or CLI flags map 1:1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden: Option<Vec<usize>>,
    pub optimizer: Option<OptimKind>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub val_fraction: Option<f64>,
    pub ewc_lambda: Option<f64>,
    pub fisher_samples: Option<usize>,
    pub ewc_per_session_anchors: Option<bool>,
    pub pathnet_layers: Option<usize>,
    pub pathnet_modules: Option<usize>,
    pub pathnet_active: Option<usize>,
    pub pathnet_units: Option<usize>,
    pub pathnet_population: Option<usize>,
    pub pathnet_generations: Option<usize>,
    pub pathnet_epochs_per_eval: Option<usize>,
    pub pathnet_ga_patience: Option<usize>,
    pub pathnet_finetune: Option<bool>,
    pub som_rows: Option<usize>,
    pub som_cols: Option<usize>,
    pub som_lr: Option<f64>,
    pub readout_lr: Option<f64>,
    pub base_iters: Option<usize>,
    pub som_only_fraction: Option<f64>,
    pub incremental_iters: Option<usize>,
    pub modulation_threshold: Option<f64>,
    pub stm_capacity: Option<usize>,
    pub sleep_interval: Option<usize>,
    pub fel_units: Option<usize>,
    pub fel_fan_in: Option<usize>,
    pub fel_excitatory_fraction: Option<f64>,
    pub fel_winners: Option<usize>,
}

macro_rules! take {
    ($dst:expr, $src:expr) => {
        if let Some(v) = &$src {
            $dst = v.clone();
        }
    };
}

impl ModelOverrides {
    pub fn mlp_settings(&self) -> MlpSettings {
        let mut s = MlpSettings::default();
        self.apply_dense(&mut s);
        s
    }

    fn apply_dense(&self, s: &mut MlpSettings) {
        take!(s.hidden, self.hidden);
        take!(s.optimizer, self.optimizer);
        take!(s.learning_rate, self.learning_rate);
        take!(s.batch_size, self.batch_size);
        take!(s.max_epochs, self.max_epochs);
        take!(s.patience, self.patience);
        take!(s.val_fraction, self.val_fraction);
    }

    pub fn ewc_settings(&self) -> EwcSettings {
        let mut s = EwcSettings::default();
        self.apply_dense(&mut s.base);
        take!(s.lambda, self.ewc_lambda);
        take!(s.fisher_samples, self.fisher_samples);
        take!(s.per_session_anchors, self.ewc_per_session_anchors);
        s
    }

    pub fn pathnet_settings(&self) -> PathNetSettings {
        let mut s = PathNetSettings::default();
        take!(s.topology.layers, self.pathnet_layers);
        take!(s.topology.modules, self.pathnet_modules);
        take!(s.topology.active, self.pathnet_active);
        take!(s.topology.units, self.pathnet_units);
        take!(s.population, self.pathnet_population);
        take!(s.generations, self.pathnet_generations);
        take!(s.epochs_per_eval, self.pathnet_epochs_per_eval);
        take!(s.ga_patience, self.pathnet_ga_patience);
        take!(s.finetune, self.pathnet_finetune);
        take!(s.batch_size, self.batch_size);
        take!(s.learning_rate, self.learning_rate);
        take!(s.val_fraction, self.val_fraction);
        s
    }

    pub fn geppnet_settings(&self, stm: bool) -> GeppNetSettings {
        let mut s = GeppNetSettings {
            stm,
            ..GeppNetSettings::default()
        };
        take!(s.som_rows, self.som_rows);
        take!(s.som_cols, self.som_cols);
        take!(s.som_lr, self.som_lr);
        take!(s.readout_lr, self.readout_lr);
        take!(s.base_iters, self.base_iters);
        take!(s.som_only_fraction, self.som_only_fraction);
        take!(s.incremental_iters, self.incremental_iters);
        take!(s.modulation_threshold, self.modulation_threshold);
        take!(s.stm_capacity, self.stm_capacity);
        take!(s.sleep_interval, self.sleep_interval);
        s
    }

    pub fn fel_settings(&self) -> FelSettings {
        let mut s = FelSettings::default();
        take!(s.hidden_units, self.hidden.as_ref().and_then(|h| h.first().copied()));
        take!(s.fel_units, self.fel_units);
        take!(s.fan_in, self.fel_fan_in);
        take!(s.excitatory_fraction, self.fel_excitatory_fraction);
        take!(s.winners, self.fel_winners);
        take!(s.learning_rate, self.learning_rate);
        take!(s.batch_size, self.batch_size);
        take!(s.max_epochs, self.max_epochs);
        take!(s.patience, self.patience);
        take!(s.val_fraction, self.val_fraction);
        s
    }
}

/// Builds the learner a run asks for.
pub fn build_learner(
    model: ModelId,
    input_dim: usize,
    n_classes: usize,
    overrides: &ModelOverrides,
    seed: u64,
) -> Result<Box<dyn Learner>> {
    Ok(match model {
        ModelId::Mlp => Box::new(MlpLearner::new(
            input_dim,
            n_classes,
            overrides.mlp_settings(),
            seed,
        )),
        ModelId::Ewc => Box::new(EwcLearner::new(
            input_dim,
            n_classes,
            overrides.ewc_settings(),
            seed,
        )),
        ModelId::Pathnet => Box::new(PathNetLearner::new(
            input_dim,
            n_classes,
            overrides.pathnet_settings(),
            seed,
        )?),
        ModelId::Geppnet => Box::new(GeppNetLearner::new(
            input_dim,
            n_classes,
            overrides.geppnet_settings(false),
            seed,
        )),
        ModelId::GeppnetStm => Box::new(GeppNetLearner::new(
            input_dim,
            n_classes,
            overrides.geppnet_settings(true),
            seed,
        )),
        ModelId::Fel => Box::new(FelLearner::new(
            input_dim,
            n_classes,
            overrides.fel_settings(),
            seed,
        )?),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub model: ModelId,
    pub dataset: String,
    #[serde(default)]
    pub dataset2: Option<String>,
    /// Session count for the permutation protocol.
    #[serde(default)]
    pub sessions: Option<usize>,
    /// Base-set share for the incremental-class protocol.
    #[serde(default = "default_base_fraction")]
    pub base_fraction: f64,
    pub seed: u64,
    /// Pins the offline reference instead of training it.
    #[serde(default)]
    pub alpha_ideal: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub overrides: ModelOverrides,
}

fn default_base_fraction() -> f64 {
    0.5
}

fn default_out_dir() -> String {
    "./results".into()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model == ModelId::Pathnet && self.protocol == Protocol::IncrementalClass {
            return Err(Error::Config(
                "pathnet cannot run the incremental-class protocol: it keeps one output head \
                 per session and needs the session id at prediction time, which would leak the \
                 class label"
                    .into(),
            ));
        }
        if self.protocol == Protocol::Multimodal && self.dataset2.is_none() {
            return Err(Error::Config(
                "multimodal protocol needs --dataset2".into(),
            ));
        }
        if let Some(t) = self.sessions {
            if self.protocol == Protocol::Permutation && t < 2 {
                return Err(Error::Config(format!("permutation needs T >= 2, got {t}")));
            }
        }
        Ok(())
    }

    pub fn record_name(&self, dataset_name: &str) -> String {
        format!(
            "{}_{}_{}_{}.json",
            self.model.as_str(),
            self.protocol.as_str(),
            dataset_name,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: usize,
    pub alpha_new: f64,
    pub alpha_base: f64,
    pub alpha_all: f64,
    pub wall_seconds: f64,
    pub model_size_mb: f64,
    pub aux_memory_mb: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub model: ModelId,
    pub protocol: Protocol,
    pub dataset: String,
    pub t_sessions: usize,
    pub seed: u64,
    pub alpha_ideal: f64,
    pub sessions: Vec<SessionRecord>,
    pub omega_base: f64,
    pub omega_new: f64,
    pub omega_all: f64,
    pub model_size_mb: f64,
    pub aux_memory_mb: f64,
    pub config: ExperimentConfig,
    pub tool_version: String,
    pub completed_at: u64,
}

impl RunRecord {
    pub fn metrics(&self) -> Result<MetricsReport> {
        MetricsReport::from_curves(
            self.t_sessions,
            self.alpha_ideal,
            self.sessions.iter().map(|s| s.alpha_base).collect(),
            self.sessions.iter().map(|s| s.alpha_new).collect(),
            self.sessions.iter().map(|s| s.alpha_all).collect(),
        )
    }

    pub fn save(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(self.config.record_name(&self.dataset));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<RunRecord> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

// wall clocks are unavailable on wasm32; sessions there record zero-width
// durations (floored to the smallest positive float)
#[cfg(not(target_arch = "wasm32"))]
fn clock_start() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn clock_start() -> Option<()> {
    None
}

#[cfg(not(target_arch = "wasm32"))]
fn clock_secs(start: &Option<std::time::Instant>) -> f64 {
    start.map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0)
}

#[cfg(target_arch = "wasm32")]
fn clock_secs(_start: &Option<()>) -> f64 {
    0.0
}

#[cfg(not(target_arch = "wasm32"))]
fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(target_arch = "wasm32")]
fn unix_now() -> u64 {
    0
}

fn predict_session(
    learner: &dyn Learner,
    session: &StudySession,
    task: usize,
) -> Result<Vec<usize>> {
    let (tx, _) = session.test();
    if learner.requires_task_id() {
        learner.predict_for_task(task, &tx)
    } else {
        learner.predict(&tx)
    }
}

fn session_mpc(learner: &dyn Learner, session: &StudySession, task: usize) -> Result<f64> {
    let preds = predict_session(learner, session, task)?;
    let (_, ty) = session.test();
    mean_per_class_accuracy(&preds, &ty, &session.classes())
}

/// Accuracy over everything seen through session `t`.
fn alpha_all_upto(
    learner: &dyn Learner,
    sessions: &[StudySession],
    t: usize,
    protocol: Protocol,
) -> Result<f64> {
    match protocol {
        // each permuted test set scores under its own permutation; the
        // overall figure is their mean
        Protocol::Permutation => {
            let mut sum = 0.0;
            for s in &sessions[..t] {
                sum += session_mpc(learner, s, s.id)?;
            }
            Ok(sum / t as f64)
        }
        // class sets are disjoint across sessions: pool per-class tallies
        Protocol::IncrementalClass | Protocol::Multimodal => {
            let mut per_class: std::collections::BTreeMap<usize, (usize, usize)> =
                Default::default();
            for s in &sessions[..t] {
                let preds = predict_session(learner, s, s.id)?;
                let (_, ty) = s.test();
                for (&p, &y) in preds.iter().zip(&ty) {
                    let e = per_class.entry(y).or_insert((0, 0));
                    e.1 += 1;
                    if p == y {
                        e.0 += 1;
                    }
                }
            }
            let mut sum = 0.0;
            let n = per_class.len();
            for (_, (hits, total)) in per_class {
                sum += hits as f64 / total as f64;
            }
            Ok(sum / n as f64)
        }
    }
}

/// Offline reference on the base set: session 1's training data against
/// session 1's test data, using the baseline MLP.
pub fn compute_alpha_ideal(
    sessions: &[StudySession],
    overrides: &ModelOverrides,
    seed: u64,
) -> Result<f64> {
    let (bx, by) = sessions[0].train();
    let (tx, ty) = sessions[0].test();
    let n_classes = stream_class_count(sessions);
    let train_ds = Dataset::new("ideal-train", bx, by, n_classes)?;
    let test_ds = Dataset::new("ideal-test", tx, ty, n_classes)?;
    train_offline_ideal(&train_ds, &test_ds, &overrides.mlp_settings(), seed)
}

#[derive(Debug, Serialize, Deserialize)]
struct IdealCache {
    dataset: String,
    protocol: Protocol,
    alpha_ideal: f64,
    seed: u64,
}

/// Looks up or computes the cached offline reference for (dataset, protocol).
pub fn alpha_ideal_cached(
    config: &ExperimentConfig,
    sessions: &[StudySession],
    dataset_name: &str,
) -> Result<f64> {
    if let Some(pinned) = config.alpha_ideal {
        return Ok(pinned);
    }
    let out_dir = Path::new(&config.out_dir);
    let cache_path = out_dir.join(format!(
        "ideal_{}_{}.json",
        dataset_name,
        config.protocol.as_str()
    ));
    if cache_path.exists() {
        let cached: IdealCache = serde_json::from_str(&std::fs::read_to_string(&cache_path)?)?;
        return Ok(cached.alpha_ideal);
    }
    let alpha = compute_alpha_ideal(sessions, &config.overrides, config.seed)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        &cache_path,
        serde_json::to_string_pretty(&IdealCache {
            dataset: dataset_name.into(),
            protocol: config.protocol,
            alpha_ideal: alpha,
            seed: config.seed,
        })?,
    )?;
    Ok(alpha)
}

/// Drives a learner through a prepared stream and assembles the run record.
/// Evaluation happens strictly between sessions.
pub fn run_sessions(
    config: &ExperimentConfig,
    sessions: &[StudySession],
    dataset_name: &str,
    alpha_ideal: f64,
) -> Result<RunRecord> {
    config.validate()?;
    if sessions.len() < 2 {
        return Err(Error::Config("a run needs at least 2 sessions".into()));
    }
    let input_dim = sessions[0].dim();
    let n_classes = stream_class_count(sessions);
    let mut learner = build_learner(
        config.model,
        input_dim,
        n_classes,
        &config.overrides,
        config.seed,
    )?;

    let t_total = sessions.len();
    let start = clock_start();
    learner.train_session(&sessions[0])?;
    let mut base_wall = clock_secs(&start);

    let mut records = Vec::with_capacity(t_total - 1);
    for t in 2..=t_total {
        let session = &sessions[t - 1];
        let start = clock_start();
        learner.train_session(session)?;
        let wall = clock_secs(&start) + std::mem::take(&mut base_wall);

        let alpha_new = session_mpc(learner.as_ref(), session, t)?;
        let alpha_base = session_mpc(learner.as_ref(), &sessions[0], 1)?;
        let alpha_all = alpha_all_upto(learner.as_ref(), sessions, t, config.protocol)?;
        let memory = learner.memory();
        records.push(SessionRecord {
            session: t,
            alpha_new,
            alpha_base,
            alpha_all,
            wall_seconds: wall.max(f64::MIN_POSITIVE),
            model_size_mb: memory.model_mb(),
            aux_memory_mb: memory.aux_mb(),
        });
    }

    let metrics = MetricsReport::from_curves(
        t_total,
        alpha_ideal,
        records.iter().map(|r| r.alpha_base).collect(),
        records.iter().map(|r| r.alpha_new).collect(),
        records.iter().map(|r| r.alpha_all).collect(),
    )?;
    let memory = learner.memory();
    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        model: config.model,
        protocol: config.protocol,
        dataset: dataset_name.to_string(),
        t_sessions: t_total,
        seed: config.seed,
        alpha_ideal,
        sessions: records,
        omega_base: metrics.omega_base,
        omega_new: metrics.omega_new,
        omega_all: metrics.omega_all,
        model_size_mb: memory.model_mb(),
        aux_memory_mb: memory.aux_mb(),
        config: config.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        completed_at: unix_now(),
    })
}

/// Builds the stream named by the config (loading datasets from disk).
pub fn build_stream(config: &ExperimentConfig) -> Result<(Vec<StudySession>, String)> {
    let (train, test) = load_dataset_dir(Path::new(&config.dataset))?;
    let name = train.name.clone();
    match config.protocol {
        Protocol::Permutation => {
            let t = config.sessions.unwrap_or(5);
            Ok((make_permutation_stream(train, test, t, config.seed)?, name))
        }
        Protocol::IncrementalClass => Ok((
            make_class_incremental_stream(
                train,
                test,
                config.base_fraction,
                ClassOrder::Ascending,
            )?,
            name,
        )),
        Protocol::Multimodal => {
            let second = config
                .dataset2
                .as_ref()
                .ok_or_else(|| Error::Config("multimodal protocol needs --dataset2".into()))?;
            let (train2, test2) = load_dataset_dir(Path::new(second))?;
            let name = format!("{}+{}", name, train2.name);
            Ok((
                make_multimodal_stream(train, test, train2, test2)?,
                name,
            ))
        }
    }
}

/// End-to-end run from a config: build the stream, resolve the offline
/// reference, train through every session, persist the record.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let (sessions, dataset_name) = build_stream(config)?;
    let alpha_ideal = alpha_ideal_cached(config, &sessions, &dataset_name)?;
    let record = run_sessions(config, &sessions, &dataset_name, alpha_ideal)?;
    record.save(Path::new(&config.out_dir))?;
    Ok(record)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelId,
    pub protocol: Protocol,
    pub mean_omega_all: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Per (model, protocol) mean of omega_all across datasets.
pub fn summarize(records: &[RunRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Input("no records to summarize".into()));
    }
    let mut groups: std::collections::BTreeMap<(String, String), (ModelId, Protocol, f64, usize)> =
        Default::default();
    for r in records {
        let key = (r.model.as_str().to_string(), r.protocol.as_str().to_string());
        let e = groups
            .entry(key)
            .or_insert((r.model, r.protocol, 0.0, 0));
        e.2 += r.omega_all;
        e.3 += 1;
    }
    Ok(Summary {
        rows: groups
            .into_values()
            .map(|(model, protocol, sum, n)| SummaryRow {
                model,
                protocol,
                mean_omega_all: sum / n as f64,
                runs: n,
            })
            .collect(),
    })
}

pub fn summary_csv(summary: &Summary, records: &[RunRecord]) -> String {
    let mut out = String::from("model,protocol,mean_omega_all,runs\n");
    for row in &summary.rows {
        out.push_str(&format!(
            "{},{},{:.6},{}\n",
            row.model.as_str(),
            row.protocol.as_str(),
            row.mean_omega_all,
            row.runs
        ));
    }
    out.push_str("\nmodel,protocol,dataset,seed,omega_base,omega_new,omega_all\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.model.as_str(),
            r.protocol.as_str(),
            r.dataset,
            r.seed,
            r.omega_base,
            r.omega_new,
            r.omega_all
        ));
    }
    out
}

/// Loads every run record in a directory (ideal caches and other JSON are
/// skipped by schema probing).
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Ok(record) = RunRecord::load(&path) {
                records.push(record);
            }
        }
    }
    records.sort_by(|a, b| {
        (a.model.as_str(), a.protocol.as_str(), &a.dataset, a.seed).cmp(&(
            b.model.as_str(),
            b.protocol.as_str(),
            &b.dataset,
            b.seed,
        ))
    });
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs_pair;

    fn blob_config(model: ModelId, protocol: Protocol) -> ExperimentConfig {
        let mut overrides = ModelOverrides {
            hidden: Some(vec![16]),
            max_epochs: Some(15),
            batch_size: Some(16),
            learning_rate: Some(5e-3),
            optimizer: Some(OptimKind::Adam),
            som_rows: Some(5),
            som_cols: Some(5),
            base_iters: Some(400),
            incremental_iters: Some(200),
            readout_lr: Some(0.05),
            fel_units: Some(24),
            fel_fan_in: Some(4),
            fel_winners: Some(4),
            pathnet_generations: Some(2),
            pathnet_population: Some(4),
            ..ModelOverrides::default()
        };
        if model == ModelId::Fel {
            overrides.hidden = Some(vec![16]);
        }
        ExperimentConfig {
            protocol,
            model,
            dataset: "blobs".into(),
            dataset2: None,
            sessions: Some(2),
            base_fraction: 0.5,
            seed: 7,
            alpha_ideal: Some(1.0),
            out_dir: "./results".into(),
            overrides,
        }
    }

    fn blob_sessions(protocol: Protocol, seed: u64) -> Vec<StudySession> {
        let (train, test) = synth_blobs_pair(4, 24, 10, 6, 0.4, seed);
        match protocol {
            Protocol::Permutation => make_permutation_stream(train, test, 2, seed).unwrap(),
            Protocol::IncrementalClass => {
                make_class_incremental_stream(train, test, 0.5, ClassOrder::Ascending).unwrap()
            }
            Protocol::Multimodal => {
                let (t2, e2) = synth_blobs_pair(3, 24, 10, 4, 0.4, seed + 1);
                make_multimodal_stream(train, test, t2, e2).unwrap()
            }
        }
    }

    #[test]
    fn pathnet_incremental_class_is_rejected_before_training() {
        let config = blob_config(ModelId::Pathnet, Protocol::IncrementalClass);
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn minimal_permutation_run_yields_one_alpha_triple() {
        let config = blob_config(ModelId::Mlp, Protocol::Permutation);
        let sessions = blob_sessions(Protocol::Permutation, 7);
        let record = run_sessions(&config, &sessions, "blobs", 1.0).unwrap();
        assert_eq!(record.sessions.len(), 1);
        assert_eq!(record.t_sessions, 2);
        assert!(record.sessions[0].wall_seconds > 0.0);
    }

    #[test]
    fn rerun_gives_identical_alpha_curves() {
        let config = blob_config(ModelId::Mlp, Protocol::Permutation);
        let sessions = blob_sessions(Protocol::Permutation, 7);
        let a = run_sessions(&config, &sessions, "blobs", 1.0).unwrap();
        let b = run_sessions(&config, &sessions, "blobs", 1.0).unwrap();
        for (x, y) in a.sessions.iter().zip(&b.sessions) {
            assert_eq!(x.alpha_new.to_bits(), y.alpha_new.to_bits());
            assert_eq!(x.alpha_base.to_bits(), y.alpha_base.to_bits());
            assert_eq!(x.alpha_all.to_bits(), y.alpha_all.to_bits());
        }
    }

    #[test]
    fn every_model_completes_a_tiny_incremental_run() {
        for model in [ModelId::Mlp, ModelId::Ewc, ModelId::Geppnet, ModelId::GeppnetStm, ModelId::Fel] {
            let config = blob_config(model, Protocol::IncrementalClass);
            let sessions = blob_sessions(Protocol::IncrementalClass, 7);
            let record = run_sessions(&config, &sessions, "blobs", 1.0)
                .unwrap_or_else(|e| panic!("{model:?}: {e}"));
            assert_eq!(record.sessions.len(), sessions.len() - 1);
        }
    }

    #[test]
    fn pathnet_runs_permutation_and_multimodal() {
        for protocol in [Protocol::Permutation, Protocol::Multimodal] {
            let mut config = blob_config(ModelId::Pathnet, protocol);
            config.dataset2 = Some("blobs2".into());
            let sessions = blob_sessions(protocol, 9);
            let record = run_sessions(&config, &sessions, "blobs", 1.0).unwrap();
            assert_eq!(record.sessions.len(), sessions.len() - 1);
        }
    }

    #[test]
    fn record_roundtrip_reproduces_omegas_exactly() {
        let config = blob_config(ModelId::Mlp, Protocol::IncrementalClass);
        let sessions = blob_sessions(Protocol::IncrementalClass, 11);
        let record = run_sessions(&config, &sessions, "blobs", 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = record.save(dir.path()).unwrap();
        let loaded = RunRecord::load(&path).unwrap();
        let recomputed = loaded.metrics().unwrap();
        assert!((recomputed.omega_base - record.omega_base).abs() < 1e-12);
        assert!((recomputed.omega_new - record.omega_new).abs() < 1e-12);
        assert!((recomputed.omega_all - record.omega_all).abs() < 1e-12);
    }

    #[test]
    fn summarize_averages_omega_all_per_model_protocol() {
        let config = blob_config(ModelId::Mlp, Protocol::Permutation);
        let sessions = blob_sessions(Protocol::Permutation, 13);
        let mut a = run_sessions(&config, &sessions, "blobs", 1.0).unwrap();
        let mut b = a.clone();
        a.omega_all = 0.2;
        b.omega_all = 0.4;
        b.dataset = "blobs2".into();
        let summary = summarize(&[a.clone(), b]).unwrap();
        assert_eq!(summary.rows.len(), 1);
        assert!((summary.rows[0].mean_omega_all - 0.3).abs() < 1e-12);
        // single record: summary equals that record's omega_all
        let single = summarize(&[a]).unwrap();
        assert!((single.rows[0].mean_omega_all - 0.2).abs() < 1e-12);
    }

    #[test]
    fn memory_ledger_shapes_per_model() {
        // geppnet aux strictly increases; mlp/ewc/fel constant; pathnet
        // grows by exactly one head per session
        let sessions = blob_sessions(Protocol::IncrementalClass, 15);
        for model in [ModelId::Mlp, ModelId::Ewc, ModelId::Geppnet, ModelId::Fel] {
            let config = blob_config(model, Protocol::IncrementalClass);
            let mut learner =
                build_learner(model, 6, 4, &config.overrides, 3).unwrap();
            let mut aux = Vec::new();
            for s in &sessions {
                learner.train_session(s).unwrap();
                aux.push(learner.memory().aux_bytes);
            }
            match model {
                ModelId::Geppnet => {
                    assert!(aux.windows(2).all(|w| w[1] > w[0]), "{model:?}: {aux:?}")
                }
                _ => assert!(
                    aux.windows(2).all(|w| w[1] == w[0]),
                    "{model:?}: {aux:?}"
                ),
            }
        }
    }
}
