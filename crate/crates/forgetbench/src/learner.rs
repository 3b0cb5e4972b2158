//! The common incremental-learner contract and the plain-MLP baseline.
//!
//! A learner consumes study sessions strictly in order (t = 1, 2, ...),
//! predicts labels among the classes it has seen, and reports a memory
//! ledger: 8 bytes per model parameter plus whatever auxiliary storage the
//! mechanism needs (stored data, per-task heads, buffers). Auxiliary use is
//! part of the benchmark contract, not an implementation detail.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StudySession};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nncore::{
    self, forward, train, NetParams, OptimKind, OptimizerSettings, TrainConfig,
};
use crate::rng;

/// Bytes attributed to the model proper vs auxiliary structures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub model_bytes: u64,
    pub aux_bytes: u64,
}

impl MemoryLedger {
    pub fn model_mb(&self) -> f64 {
        self.model_bytes as f64 / (1024.0 * 1024.0)
    }

    pub fn aux_mb(&self) -> f64 {
        self.aux_bytes as f64 / (1024.0 * 1024.0)
    }
}

/// Sequential-session bookkeeping shared by every learner.
#[derive(Debug, Clone, Default)]
pub struct SessionTracker {
    completed: usize,
    seen_classes: BTreeSet<usize>,
}

impl SessionTracker {
    pub fn expect(&self, session: &StudySession) -> Result<()> {
        let next = self.completed + 1;
        if session.id != next {
            return Err(Error::Protocol(format!(
                "session {} arrived, expected session {next}",
                session.id
            )));
        }
        Ok(())
    }

    pub fn complete(&mut self, session: &StudySession) {
        self.completed += 1;
        self.seen_classes.extend(session.classes());
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        self.seen_classes.iter().copied().collect()
    }
}

/// The incremental-learner interface the harness drives.
pub trait Learner {
    fn model_id(&self) -> &'static str;

    /// Learns one session. Sessions must arrive in order t = 1, 2, ...
    fn train_session(&mut self, session: &StudySession) -> Result<()>;

    /// Predicts labels, restricted to the classes seen so far.
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>>;

    /// Task-conditioned prediction. Only meaningful for learners that keep
    /// per-task state; everything else ignores the task id.
    fn predict_for_task(&self, task: usize, x: &Matrix) -> Result<Vec<usize>> {
        let _ = task;
        self.predict(x)
    }

    /// True when evaluation must supply the task id (per-task output heads).
    fn requires_task_id(&self) -> bool {
        false
    }

    fn sessions_trained(&self) -> usize;

    fn seen_classes(&self) -> Vec<usize>;

    fn memory(&self) -> MemoryLedger;
}

/// Unweighted mean over the given classes of per-class accuracy.
pub fn mean_per_class_accuracy(
    preds: &[usize],
    labels: &[usize],
    classes: &[usize],
) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Eval("empty class set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for &class in classes {
        let mut n = 0usize;
        let mut hits = 0usize;
        for (&p, &y) in preds.iter().zip(labels) {
            if y == class {
                n += 1;
                if p == y {
                    hits += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Eval(format!("class {class} has no test examples")));
        }
        total += hits as f64 / n as f64;
    }
    Ok(total / classes.len() as f64)
}

/// Argmax over logits restricted to an allowed class set.
pub fn predict_restricted(logits: &Matrix, allowed: &[usize]) -> Vec<usize> {
    let mut preds = Vec::with_capacity(logits.rows());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let mut best = allowed[0];
        for &c in allowed {
            if row[c] > row[best] {
                best = c;
            }
        }
        preds.push(best);
    }
    preds
}

/// Training knobs shared by the dense-net learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSettings {
    pub hidden: Vec<usize>,
    pub optimizer: OptimKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for MlpSettings {
    fn default() -> Self {
        MlpSettings {
            hidden: vec![400, 400],
            optimizer: OptimKind::Nadam,
            learning_rate: 8e-4,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            val_fraction: 0.1,
        }
    }
}

impl MlpSettings {
    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings::new(self.optimizer, self.learning_rate)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            monitor: nncore::Monitor::ValAccuracy,
            seed,
        }
    }
}

/// Seeded, stratified train/validation split of one session's data. Every
/// class with at least two rows contributes to the validation side; a
/// session too small to split validates on its own training rows.
pub fn val_split(
    x: &Matrix,
    y: &[usize],
    val_fraction: f64,
    seed: u64,
) -> (Matrix, Vec<usize>, Matrix, Vec<usize>) {
    let n = x.rows();
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &label) in y.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut r = rng::stream(seed, "valsplit");
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (_, mut rows) in by_class {
        if rows.len() < 2 {
            train_idx.extend_from_slice(&rows);
            continue;
        }
        rng::shuffle(&mut rows, &mut r);
        let n_val = (((rows.len() as f64) * val_fraction).round() as usize)
            .clamp(1, rows.len() - 1);
        val_idx.extend_from_slice(&rows[..n_val]);
        train_idx.extend_from_slice(&rows[n_val..]);
    }
    if val_idx.is_empty() {
        val_idx = (0..n).collect();
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    (
        x.select_rows(&train_idx),
        train_idx.iter().map(|&i| y[i]).collect(),
        x.select_rows(&val_idx),
        val_idx.iter().map(|&i| y[i]).collect(),
    )
}

pub(crate) fn session_seed(seed: u64, session_id: usize) -> u64 {
    seed ^ (session_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The plain MLP baseline: a fresh early-stopped training run per session,
/// no mitigation mechanism at all.
pub struct MlpLearner {
    settings: MlpSettings,
    seed: u64,
    net: NetParams,
    tracker: SessionTracker,
}

impl MlpLearner {
    pub fn new(input_dim: usize, n_classes: usize, settings: MlpSettings, seed: u64) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&settings.hidden);
        dims.push(n_classes);
        let net = NetParams::new(&dims, &mut rng::stream(seed, "init"));
        MlpLearner {
            settings,
            seed,
            net,
            tracker: SessionTracker::default(),
        }
    }

    pub fn net(&self) -> &NetParams {
        &self.net
    }
}

impl Learner for MlpLearner {
    fn model_id(&self) -> &'static str {
        "mlp"
    }

    fn train_session(&mut self, session: &StudySession) -> Result<()> {
        self.tracker.expect(session)?;
        let (x, y) = session.train();
        let s = session_seed(self.seed, session.id);
        let (tx, ty, vx, vy) = val_split(&x, &y, self.settings.val_fraction, s);
        train(
            &mut self.net,
            &tx,
            &ty,
            &vx,
            &vy,
            &self.settings.train_config(s),
            self.settings.optimizer_settings(),
            None,
        )?;
        self.tracker.complete(session);
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if self.tracker.completed() == 0 {
            return Err(Error::State("predict before any training".into()));
        }
        let cache = forward(&self.net, x)?;
        Ok(predict_restricted(
            cache.logits(),
            &self.tracker.seen_classes(),
        ))
    }

    fn sessions_trained(&self) -> usize {
        self.tracker.completed()
    }

    fn seen_classes(&self) -> Vec<usize> {
        self.tracker.seen_classes()
    }

    fn memory(&self) -> MemoryLedger {
        MemoryLedger {
            model_bytes: 8 * self.net.n_params() as u64,
            aux_bytes: 0,
        }
    }
}

/// Offline reference accuracy: trains the baseline MLP on the full training
/// split and returns mean-per-class accuracy on the test split.
pub fn train_offline_ideal(
    train_ds: &Dataset,
    test_ds: &Dataset,
    settings: &MlpSettings,
    seed: u64,
) -> Result<f64> {
    let mut dims = vec![train_ds.dim()];
    dims.extend_from_slice(&settings.hidden);
    dims.push(train_ds.n_classes);
    let mut net = NetParams::new(&dims, &mut rng::stream(seed, "init"));
    let (tx, ty, vx, vy) = val_split(
        &train_ds.features,
        &train_ds.labels,
        settings.val_fraction,
        seed,
    );
    train(
        &mut net,
        &tx,
        &ty,
        &vx,
        &vy,
        &settings.train_config(seed),
        settings.optimizer_settings(),
        None,
    )?;
    let cache = forward(&net, &test_ds.features)?;
    let classes: Vec<usize> = (0..test_ds.n_classes)
        .filter(|&c| !test_ds.class_rows(c).is_empty())
        .collect();
    let preds = predict_restricted(cache.logits(), &classes);
    mean_per_class_accuracy(&preds, &test_ds.labels, &classes)
}
