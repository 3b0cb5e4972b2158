//! SOM-based rehearsal learner and its dual-memory (short-term buffer)
//! variant.
//!
//! A 2-D Kohonen lattice projects inputs onto a topological map; a linear
//! readout trained by the delta rule classifies from the lattice activation.
//! The base session first organizes the lattice alone, then trains lattice
//! and readout jointly. Incremental sessions replay the new data mixed with
//! everything stored so far, updating only on examples the readout is
//! uncertain about. The STM variant routes those uncertain examples into a
//! fixed-capacity FIFO buffer instead and consolidates them during periodic
//! sleep phases; the buffer is emptied after each session.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::StudySession;
use crate::error::{Error, Result};
use crate::learner::{Learner, MemoryLedger, SessionTracker};
use crate::linalg::{squared_distance, Matrix};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeppNetSettings {
    pub som_rows: usize,
    pub som_cols: usize,
    /// Initial lattice learning rate.
    pub som_lr: f64,
    /// Fixed delta-rule learning rate for the readout.
    pub readout_lr: f64,
    /// Single-example iterations for the base session (both phases).
    pub base_iters: usize,
    /// Share of the base budget spent on lattice-only organization.
    pub som_only_fraction: f64,
    /// Single-example iterations per incremental session.
    pub incremental_iters: usize,
    /// Uncertainty gate: update only when top1-top2 confidence falls below.
    pub modulation_threshold: f64,
    /// Dual-memory variant: buffer uncertain examples, consolidate in sleep.
    pub stm: bool,
    pub stm_capacity: usize,
    pub sleep_interval: usize,
}

impl Default for GeppNetSettings {
    fn default() -> Self {
        GeppNetSettings {
            som_rows: 23,
            som_cols: 23,
            som_lr: 0.1,
            readout_lr: 1e-3,
            base_iters: 80_000,
            som_only_fraction: 0.5,
            incremental_iters: 20_000,
            modulation_threshold: 0.5,
            stm: false,
            stm_capacity: 1500,
            sleep_interval: 2000,
        }
    }
}

/// The Kohonen lattice: `rows x cols` units with weight vectors in input
/// space, plus exponentially decaying learning-rate and radius schedules
/// that continue across sessions.
#[derive(Debug, Clone)]
pub struct SomLattice {
    pub rows: usize,
    pub cols: usize,
    pub weights: Matrix,
    pub iteration: usize,
    pub initial_lr: f64,
    pub sigma0: f64,
    pub tau: f64,
}

impl SomLattice {
    pub fn new(rows: usize, cols: usize, dim: usize, initial_lr: f64, tau: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, "som-init");
        let mut weights = Matrix::zeros(rows * cols, dim);
        for v in weights.data_mut() {
            *v = r.random::<f64>();
        }
        let sigma0 = ((rows * rows + cols * cols) as f64).sqrt() / 2.0;
        SomLattice {
            rows,
            cols,
            weights,
            iteration: 0,
            initial_lr,
            sigma0,
            tau: tau.max(1.0),
        }
    }

    pub fn units(&self) -> usize {
        self.rows * self.cols
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr * (-(self.iteration as f64) / self.tau).exp()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma0 * (-(self.iteration as f64) / self.tau).exp()
    }

    /// Squared Euclidean distance from `x` to every unit, row-major order.
    pub fn distances(&self, x: &[f64]) -> Vec<f64> {
        (0..self.units())
            .map(|u| squared_distance(self.weights.row(u), x))
            .collect()
    }

    /// Best-matching unit as a lattice coordinate; ties resolve to the
    /// lowest row-major index.
    pub fn bmu(&self, x: &[f64]) -> Result<(usize, usize)> {
        if x.len() != self.weights.cols() {
            return Err(Error::shape(
                "som bmu",
                format!("{} features", self.weights.cols()),
                format!("{} features", x.len()),
            ));
        }
        let d = self.distances(x);
        let mut best = 0;
        for (u, &v) in d.iter().enumerate() {
            if v < d[best] {
                best = u;
            }
        }
        Ok((best / self.cols, best % self.cols))
    }

    /// One Kohonen update with explicit rate and radius:
    /// `w_u += lr * exp(-lattice_dist(u, bmu)^2 / (2 sigma^2)) * (x - w_u)`.
    pub fn update_with(&mut self, x: &[f64], lr: f64, sigma: f64) -> Result<()> {
        let (br, bc) = self.bmu(x)?;
        let sig2 = (sigma * sigma).max(1e-300);
        for ur in 0..self.rows {
            for uc in 0..self.cols {
                let dr = ur as f64 - br as f64;
                let dc = uc as f64 - bc as f64;
                let h = (-(dr * dr + dc * dc) / (2.0 * sig2)).exp();
                if h == 0.0 {
                    continue;
                }
                let row = self.weights.row_mut(ur * self.cols + uc);
                for (w, &xv) in row.iter_mut().zip(x) {
                    *w += lr * h * (xv - *w);
                }
            }
        }
        Ok(())
    }

    /// Scheduled update; advances the iteration counter.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        let lr = self.lr();
        let sigma = self.sigma();
        self.update_with(x, lr, sigma)?;
        self.iteration += 1;
        Ok(())
    }

    /// Gaussian activation over units, normalized to sum 1. The bandwidth is
    /// calibrated per example so that roughly the ten nearest units carry
    /// the mass; squared distances concentrate in high dimension, so a
    /// fixed-width kernel would smear the activation over the whole lattice.
    pub fn activation(&self, x: &[f64]) -> Vec<f64> {
        let d = self.distances(x);
        let n = d.len();
        let mean = d.iter().sum::<f64>() / n as f64;
        if mean <= 0.0 {
            return vec![1.0 / n as f64; n];
        }
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        let d_min = sorted[0];
        let k = 10.min(n - 1);
        // the k-th nearest unit lands at weight 1e-2
        let spread = (sorted[k] - d_min).max(mean * 1e-9);
        let t = spread / (100.0f64).ln();
        let mut a: Vec<f64> = d.iter().map(|&v| (-(v - d_min) / t).exp()).collect();
        let sum: f64 = a.iter().sum();
        for v in a.iter_mut() {
            *v /= sum;
        }
        a
    }
}

/// Top-1 minus top-2 probability gap; 1.0 when there is no runner-up.
pub fn top_gap(probs: &[f64]) -> f64 {
    if probs.len() < 2 {
        return 1.0;
    }
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &p in probs {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    top1 - top2
}

/// The rehearsal learner (plain or dual-memory variant per settings).
pub struct GeppNetLearner {
    settings: GeppNetSettings,
    seed: u64,
    input_dim: usize,
    n_classes: usize,
    som: SomLattice,
    readout_w: Matrix,
    readout_b: Vec<f64>,
    stored_x: Vec<f64>,
    stored_y: Vec<usize>,
    stm_buffer: VecDeque<(Vec<f64>, usize)>,
    sleeps_last_session: usize,
    tracker: SessionTracker,
}

impl GeppNetLearner {
    pub fn new(
        input_dim: usize,
        n_classes: usize,
        settings: GeppNetSettings,
        seed: u64,
    ) -> Self {
        let som = SomLattice::new(
            settings.som_rows,
            settings.som_cols,
            input_dim,
            settings.som_lr,
            settings.base_iters as f64,
            seed,
        );
        let units = som.units();
        GeppNetLearner {
            settings,
            seed,
            input_dim,
            n_classes,
            som,
            readout_w: Matrix::zeros(n_classes, units),
            readout_b: vec![0.0; n_classes],
            stored_x: Vec::new(),
            stored_y: Vec::new(),
            stm_buffer: VecDeque::new(),
            sleeps_last_session: 0,
            tracker: SessionTracker::default(),
        }
    }

    pub fn som(&self) -> &SomLattice {
        &self.som
    }

    pub fn stored_examples(&self) -> usize {
        self.stored_y.len()
    }

    pub fn stm_occupancy(&self) -> usize {
        self.stm_buffer.len()
    }

    /// Sleep phases run during the most recent session (final sleep included).
    pub fn sleeps_last_session(&self) -> usize {
        self.sleeps_last_session
    }

    fn readout_outputs(&self, activation: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| crate::linalg::dot(self.readout_w.row(c), activation) + self.readout_b[c])
            .collect()
    }

    /// The readout's outputs over the seen classes as a probability vector.
    /// The delta rule regresses onto one-hot targets, so the raw outputs
    /// already estimate class probabilities; clamping at zero and
    /// renormalizing keeps the 0.5 modulation threshold mid-scale (a
    /// temperature-1 softmax of these small regression scores would compress
    /// every gap toward zero and the gate would never close).
    fn seen_probs(&self, outputs: &[f64], seen: &[usize]) -> Vec<f64> {
        // the epsilon floor keeps every confidence strictly below 1 so a
        // threshold of 1.0 still treats non-degenerate examples as novel
        let clipped: Vec<f64> = seen.iter().map(|&c| outputs[c].max(1e-6)).collect();
        let sum: f64 = clipped.iter().sum();
        clipped.into_iter().map(|v| v / sum).collect()
    }

    /// Probability gap between the two most likely seen classes for `x`.
    pub fn confidence(&self, x: &[f64]) -> f64 {
        let seen = self.tracker.seen_classes();
        if seen.len() < 2 {
            return 1.0;
        }
        let a = self.som.activation(x);
        let outputs = self.readout_outputs(&a);
        top_gap(&self.seen_probs(&outputs, &seen))
    }

    fn readout_update(&mut self, activation: &[f64], label: usize) {
        let outputs = self.readout_outputs(activation);
        let lr = self.settings.readout_lr;
        for c in 0..self.n_classes {
            let target = if c == label { 1.0 } else { 0.0 };
            let err = target - outputs[c];
            if err == 0.0 {
                continue;
            }
            let row = self.readout_w.row_mut(c);
            for (w, &a) in row.iter_mut().zip(activation) {
                *w += lr * err * a;
            }
            self.readout_b[c] += lr * err;
        }
    }

    fn joint_update(&mut self, x: &[f64], label: usize) -> Result<()> {
        self.som.update(x)?;
        let a = self.som.activation(x);
        self.readout_update(&a, label);
        Ok(())
    }

    fn store(&mut self, x: &Matrix, y: &[usize]) {
        self.stored_x.extend_from_slice(x.data());
        self.stored_y.extend_from_slice(y);
    }

    fn stored_row(&self, i: usize) -> &[f64] {
        &self.stored_x[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Base session: lattice-only organization, then joint lattice+readout
    /// training, then the session is stored for later rehearsal.
    fn train_base(&mut self, session: &StudySession) -> Result<()> {
        let (x, y) = session.train();
        if x.rows() == 0 {
            return Err(Error::Input("empty base session".into()));
        }
        let phase_a = ((self.settings.base_iters as f64) * self.settings.som_only_fraction)
            .round() as usize;
        let phase_b = self.settings.base_iters - phase_a.min(self.settings.base_iters);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let mut r = rng::stream(self.seed, "gepp-base");
        let mut cursor = order.len();
        let mut next = |order: &mut Vec<usize>, r: &mut rand_chacha::ChaCha8Rng| -> usize {
            if cursor >= order.len() {
                rng::shuffle(order, r);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            i
        };
        for _ in 0..phase_a {
            let i = next(&mut order, &mut r);
            self.som.update(x.row(i))?;
        }
        for _ in 0..phase_b {
            let i = next(&mut order, &mut r);
            self.joint_update(&x.row(i).to_vec(), y[i])?;
        }
        self.store(&x, &y);
        Ok(())
    }

    fn sleep(&mut self) -> Result<()> {
        if self.stm_buffer.is_empty() {
            return Ok(());
        }
        let snapshot: Vec<(Vec<f64>, usize)> = self.stm_buffer.iter().cloned().collect();
        for (x, y) in snapshot {
            self.joint_update(&x, y)?;
        }
        self.sleeps_last_session += 1;
        Ok(())
    }

    /// Incremental session: iterate over new data mixed with everything
    /// stored; uncertain examples update the model (plain) or enter the STM
    /// buffer for sleep consolidation (dual-memory).
    fn train_incremental(&mut self, session: &StudySession) -> Result<()> {
        let (x, y) = session.train();
        self.sleeps_last_session = 0;
        // pool = new session examples followed by the store; materialized
        // indices keep the iteration order seeded and cheap
        let n_new = x.rows();
        let n_stored = self.stored_y.len();
        let pool = n_new + n_stored;
        let mut order: Vec<usize> = (0..pool).collect();
        let mut r = rng::stream(crate::learner::session_seed(self.seed, session.id), "gepp-inc");
        let mut cursor = order.len();
        let mut presented = 0usize;
        while presented < self.settings.incremental_iters {
            if cursor >= order.len() {
                rng::shuffle(&mut order, &mut r);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            presented += 1;
            let (row, label) = if idx < n_new {
                (x.row(idx).to_vec(), y[idx])
            } else {
                (self.stored_row(idx - n_new).to_vec(), self.stored_y[idx - n_new])
            };
            let novel = self.confidence(&row) < self.settings.modulation_threshold;
            if novel {
                if self.settings.stm {
                    if self.stm_buffer.len() >= self.settings.stm_capacity {
                        self.stm_buffer.pop_front();
                    }
                    self.stm_buffer.push_back((row, label));
                } else {
                    self.joint_update(&row, label)?;
                }
            }
            if self.settings.stm
                && self.settings.sleep_interval > 0
                && presented % self.settings.sleep_interval == 0
            {
                self.sleep()?;
            }
        }
        if self.settings.stm {
            self.sleep()?;
            self.stm_buffer.clear();
        }
        self.store(&x, &y);
        Ok(())
    }
}

impl Learner for GeppNetLearner {
    fn model_id(&self) -> &'static str {
        if self.settings.stm {
            "geppnet-stm"
        } else {
            "geppnet"
        }
    }

    fn train_session(&mut self, session: &StudySession) -> Result<()> {
        self.tracker.expect(session)?;
        if session.id == 1 {
            self.train_base(session)?;
        } else {
            self.train_incremental(session)?;
        }
        self.tracker.complete(session);
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if self.tracker.completed() == 0 {
            return Err(Error::State("predict before any training".into()));
        }
        let seen = self.tracker.seen_classes();
        let mut preds = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let a = self.som.activation(x.row(i));
            let outputs = self.readout_outputs(&a);
            let mut best = seen[0];
            for &c in &seen {
                if outputs[c] > outputs[best] {
                    best = c;
                }
            }
            preds.push(best);
        }
        Ok(preds)
    }

    fn sessions_trained(&self) -> usize {
        self.tracker.completed()
    }

    fn seen_classes(&self) -> Vec<usize> {
        self.tracker.seen_classes()
    }

    fn memory(&self) -> MemoryLedger {
        let units = self.som.units();
        let model = 8 * (units * self.input_dim + self.n_classes * units + self.n_classes);
        let stored = self.stored_y.len() * (8 * self.input_dim + 8);
        let buffer = if self.settings.stm {
            self.settings.stm_capacity * (8 * self.input_dim + 8)
        } else {
            0
        };
        MemoryLedger {
            model_bytes: model as u64,
            aux_bytes: (stored + buffer) as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_class_incremental_stream, synth_blobs_pair, ClassOrder};
    use crate::rng::stream;

    fn small_settings() -> GeppNetSettings {
        GeppNetSettings {
            som_rows: 5,
            som_cols: 5,
            som_lr: 0.1,
            readout_lr: 0.05,
            base_iters: 600,
            som_only_fraction: 0.5,
            incremental_iters: 300,
            modulation_threshold: 0.5,
            stm: false,
            stm_capacity: 40,
            sleep_interval: 100,
        }
    }

    #[test]
    fn bmu_finds_exact_weight_match() {
        let mut som = SomLattice::new(6, 7, 3, 0.1, 100.0, 1);
        let target = som.weights.row(3 * 7 + 5).to_vec();
        assert_eq!(som.bmu(&target).unwrap(), (3, 5));
        // dimension mismatch is a shape error
        assert!(som.bmu(&[1.0, 2.0]).is_err());
        let _ = &mut som;
    }

    #[test]
    fn bmu_on_orthonormal_lattice_picks_matching_basis_unit() {
        let mut som = SomLattice::new(2, 2, 4, 0.1, 100.0, 2);
        for u in 0..4 {
            for j in 0..4 {
                som.weights.set(u, j, if u == j { 1.0 } else { 0.0 });
            }
        }
        let e2 = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(som.bmu(&e2).unwrap(), (1, 0));
    }

    #[test]
    fn bmu_matches_brute_force_scan() {
        let som = SomLattice::new(5, 5, 8, 0.1, 100.0, 3);
        let mut r = stream(4, "probe");
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| r.random::<f64>()).collect();
            let (br, bc) = som.bmu(&x).unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for u in 0..25 {
                let d = squared_distance(som.weights.row(u), &x);
                if d < best_d {
                    best_d = d;
                    best = u;
                }
            }
            assert_eq!((br, bc), (best / 5, best % 5));
        }
    }

    #[test]
    fn full_pull_zero_neighborhood_moves_only_the_bmu() {
        let mut som = SomLattice::new(4, 4, 3, 0.1, 100.0, 5);
        let before = som.weights.clone();
        let x = vec![0.9, 0.1, 0.5];
        let (br, bc) = som.bmu(&x).unwrap();
        som.update_with(&x, 1.0, 1e-9).unwrap();
        for u in 0..16 {
            if u == br * 4 + bc {
                assert_eq!(som.weights.row(u), x.as_slice());
            } else {
                assert_eq!(som.weights.row(u), before.row(u));
            }
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut som = SomLattice::new(3, 3, 4, 0.1, 100.0, 6);
        let before = som.weights.clone();
        som.update_with(&[0.5, 0.5, 0.5, 0.5], 0.0, 2.0).unwrap();
        assert_eq!(som.weights, before);
    }

    #[test]
    fn update_matches_per_unit_recomputation() {
        let som0 = SomLattice::new(3, 3, 2, 0.1, 100.0, 7);
        let x = vec![0.3, 0.8];
        let (lr, sigma) = (0.25, 1.5);
        let mut som = som0.clone();
        som.update_with(&x, lr, sigma).unwrap();
        let (br, bc) = som0.bmu(&x).unwrap();
        for ur in 0..3 {
            for uc in 0..3 {
                let dr = ur as f64 - br as f64;
                let dc = uc as f64 - bc as f64;
                let h = (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
                let u = ur * 3 + uc;
                for j in 0..2 {
                    let want = som0.weights.get(u, j)
                        + lr * h * (x[j] - som0.weights.get(u, j));
                    assert!(
                        (som.weights.get(u, j) - want).abs() < 1e-12,
                        "unit ({ur},{uc}) dim {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn schedules_decay_and_iteration_counts_updates() {
        let mut som = SomLattice::new(3, 3, 2, 0.1, 10.0, 8);
        let lr0 = som.lr();
        let sig0 = som.sigma();
        for _ in 0..10 {
            som.update(&[0.1, 0.2]).unwrap();
        }
        assert_eq!(som.iteration, 10);
        assert!(som.lr() < lr0);
        assert!(som.sigma() < sig0);
    }

    #[test]
    fn top_gap_arithmetic() {
        assert_eq!(top_gap(&[1.0]), 1.0);
        assert!((top_gap(&[0.25, 0.25, 0.25, 0.25])).abs() < 1e-12);
        assert!((top_gap(&[0.6, 0.3, 0.1]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn one_class_confidence_is_one() {
        let (train_ds, test_ds) = synth_blobs_pair(2, 15, 6, 3, 0.3, 9);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.5, ClassOrder::Ascending).unwrap();
        let mut learner = GeppNetLearner::new(3, 2, small_settings(), 10);
        learner.train_session(&sessions[0]).unwrap();
        let (x, _) = sessions[0].train();
        assert_eq!(learner.confidence(x.row(0)), 1.0);
    }

    #[test]
    fn zero_budget_base_leaves_som_at_initialization() {
        let (train_ds, test_ds) = synth_blobs_pair(2, 15, 6, 3, 0.3, 11);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.5, ClassOrder::Ascending).unwrap();
        let mut cfg = small_settings();
        cfg.base_iters = 0;
        let mut learner = GeppNetLearner::new(3, 2, cfg.clone(), 12);
        let before = learner.som().weights.clone();
        learner.train_session(&sessions[0]).unwrap();
        assert_eq!(learner.som().weights, before);
        assert_eq!(learner.som().iteration, 0);
    }

    #[test]
    fn base_iteration_counter_equals_budget() {
        let (train_ds, test_ds) = synth_blobs_pair(2, 15, 6, 3, 0.3, 13);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.5, ClassOrder::Ascending).unwrap();
        let cfg = small_settings();
        let mut learner = GeppNetLearner::new(3, 2, cfg.clone(), 14);
        learner.train_session(&sessions[0]).unwrap();
        assert_eq!(learner.som().iteration, cfg.base_iters);
    }

    #[test]
    fn base_training_beats_majority_rate_on_blobs() {
        let (train_ds, test_ds) = synth_blobs_pair(4, 25, 10, 5, 0.3, 15);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.5, ClassOrder::Ascending).unwrap();
        let mut learner = GeppNetLearner::new(5, 4, small_settings(), 16);
        learner.train_session(&sessions[0]).unwrap();
        let (tx, ty) = sessions[0].test();
        let preds = learner.predict(&tx).unwrap();
        let hits = preds.iter().zip(&ty).filter(|(p, y)| p == y).count();
        let majority = 0.5; // two balanced base classes
        assert!(
            hits as f64 / ty.len() as f64 > majority,
            "accuracy {}",
            hits as f64 / ty.len() as f64
        );
    }

    #[test]
    fn threshold_zero_freezes_the_model() {
        let (train_ds, test_ds) = synth_blobs_pair(3, 15, 6, 4, 0.3, 17);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.3, ClassOrder::Ascending).unwrap();
        let mut cfg = small_settings();
        cfg.modulation_threshold = 0.0;
        let mut learner = GeppNetLearner::new(4, 3, cfg, 18);
        learner.train_session(&sessions[0]).unwrap();
        let (tx, _) = sessions[0].test();
        let before_preds = learner.predict(&tx).unwrap();
        let som_before = learner.som().weights.clone();
        learner.train_session(&sessions[1]).unwrap();
        learner.train_session(&sessions[2]).unwrap();
        assert_eq!(learner.som().weights, som_before);
        // seen classes grew, but outputs for them were never trained;
        // restrict comparison to the base classes by construction
        let after_preds = learner.predict(&tx).unwrap();
        let changed = before_preds
            .iter()
            .zip(&after_preds)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 0);
    }

    #[test]
    fn threshold_one_updates_on_every_example() {
        let (train_ds, test_ds) = synth_blobs_pair(3, 15, 6, 4, 0.3, 19);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.4, ClassOrder::Ascending).unwrap();
        let mut cfg = small_settings();
        cfg.modulation_threshold = 1.0;
        cfg.incremental_iters = 50;
        let mut learner = GeppNetLearner::new(4, 3, cfg.clone(), 20);
        learner.train_session(&sessions[0]).unwrap();
        let iters_after_base = learner.som().iteration;
        learner.train_session(&sessions[1]).unwrap();
        // every presented example is below threshold 1.0, so every
        // presentation updated the lattice
        assert_eq!(
            learner.som().iteration,
            iters_after_base + cfg.incremental_iters
        );
    }

    #[test]
    fn stored_data_grows_by_exactly_each_session_size() {
        let (train_ds, test_ds) = synth_blobs_pair(3, 15, 6, 4, 0.3, 21);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.4, ClassOrder::Ascending).unwrap();
        let mut learner = GeppNetLearner::new(4, 3, small_settings(), 22);
        let mut expect = 0usize;
        let mut aux_prev = learner.memory().aux_bytes;
        for s in &sessions {
            learner.train_session(s).unwrap();
            expect += s.n_train();
            assert_eq!(learner.stored_examples(), expect);
            let aux_now = learner.memory().aux_bytes;
            assert_eq!(aux_now - aux_prev, (s.n_train() * (8 * 4 + 8)) as u64);
            aux_prev = aux_now;
        }
    }

    #[test]
    fn stm_buffer_respects_capacity_fifo_and_empties_after_session() {
        let (train_ds, test_ds) = synth_blobs_pair(3, 20, 8, 4, 0.3, 23);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.4, ClassOrder::Ascending).unwrap();
        let mut cfg = small_settings();
        cfg.stm = true;
        cfg.stm_capacity = 5;
        cfg.sleep_interval = 40;
        let mut learner = GeppNetLearner::new(4, 3, cfg, 24);
        learner.train_session(&sessions[0]).unwrap();
        learner.train_session(&sessions[1]).unwrap();
        assert_eq!(learner.stm_occupancy(), 0, "buffer not emptied");
    }

    #[test]
    fn sleep_interval_beyond_budget_gives_at_most_one_sleep() {
        // trace-count oracle over the iteration schedule: with
        // sleep_interval > incremental_iters the periodic sleep never fires,
        // leaving only the end-of-session consolidation (if anything was
        // buffered)
        let (train_ds, test_ds) = synth_blobs_pair(3, 20, 8, 4, 0.3, 25);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.4, ClassOrder::Ascending).unwrap();
        let mut cfg = small_settings();
        cfg.stm = true;
        cfg.incremental_iters = 60;
        cfg.sleep_interval = 1000;
        let mut learner = GeppNetLearner::new(4, 3, cfg, 26);
        learner.train_session(&sessions[0]).unwrap();
        learner.train_session(&sessions[1]).unwrap();
        assert!(
            learner.sleeps_last_session() <= 1,
            "{} sleeps",
            learner.sleeps_last_session()
        );
        assert_eq!(learner.stm_occupancy(), 0);
    }

    #[test]
    fn base_called_out_of_order_is_protocol_error() {
        let (train_ds, test_ds) = synth_blobs_pair(2, 10, 5, 3, 0.3, 27);
        let sessions =
            make_class_incremental_stream(train_ds, test_ds, 0.5, ClassOrder::Ascending).unwrap();
        let mut learner = GeppNetLearner::new(3, 2, small_settings(), 28);
        assert!(matches!(
            learner.train_session(&sessions[1]),
            Err(Error::Protocol(_))
        ));
    }
}
