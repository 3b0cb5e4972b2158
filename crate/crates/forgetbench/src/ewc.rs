//! Elastic weight consolidation: diagonal Fisher estimation and the
//! quadratic anchor penalty.
//!
//! After each session the learner snapshots the parameters, estimates the
//! diagonal Fisher information of the model's own predictive distribution on
//! that session's data, and stores the pair as an anchor. Later training
//! pays `sum_i (lambda/2) * F_i * (theta_i - anchor_i)^2` per anchor, which
//! steers plasticity toward parameters that mattered least so far.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::StudySession;
use crate::error::{Error, Result};
use crate::learner::{
    predict_restricted, session_seed, val_split, Learner, MemoryLedger, MlpSettings,
    SessionTracker,
};
use crate::linalg::Matrix;
use crate::nncore::{
    backward, forward, loss_grad, softmax_rows, softmax_xent_grad, train, Grads, NetParams,
    Penalty,
};
use crate::rng;

/// Diagonal Fisher estimate, one entry per parameter (shapes match the net).
pub type FisherDiag = Grads;

/// One consolidated task: parameter snapshot, Fisher diagonal, strength.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub params: NetParams,
    pub fisher: FisherDiag,
    pub lambda: f64,
}

/// Per-task anchors, in consolidation order.
#[derive(Debug, Clone, Default)]
pub struct EwcState {
    pub anchors: Vec<Anchor>,
}

impl EwcState {
    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Appends an anchor for the just-finished session.
    pub fn consolidate(&mut self, net: &NetParams, fisher: FisherDiag, lambda: f64) {
        self.anchors.push(Anchor {
            params: net.clone(),
            fisher,
            lambda,
        });
    }

    /// Folds every anchor into a single one: Fisher diagonals sum, the
    /// parameter snapshot comes from the newest anchor. Keeps auxiliary
    /// memory constant when used after each consolidation.
    pub fn merge_anchors(&mut self) {
        if self.anchors.len() < 2 {
            return;
        }
        let newest = self.anchors.last().unwrap();
        let mut merged = Anchor {
            params: newest.params.clone(),
            fisher: newest.fisher.clone(),
            lambda: newest.lambda,
        };
        for older in &self.anchors[..self.anchors.len() - 1] {
            for (l, (fw, fb)) in merged.fisher.layers.iter_mut().enumerate() {
                let (ow, ob) = &older.fisher.layers[l];
                for (m, o) in fw.iter_mut().zip(ow) {
                    *m += o;
                }
                for (m, o) in fb.iter_mut().zip(ob) {
                    *m += o;
                }
            }
        }
        self.anchors = vec![merged];
    }

    /// Penalty loss at `net` without touching gradients.
    pub fn penalty_loss(&self, net: &NetParams) -> f64 {
        let mut scratch = Grads::zeros_like(net);
        self.loss_and_grad(net, &mut scratch)
    }
}

impl Penalty for EwcState {
    fn loss_and_grad(&self, net: &NetParams, grads: &mut Grads) -> f64 {
        let mut loss = 0.0;
        for anchor in &self.anchors {
            let lam = anchor.lambda;
            for (l, layer) in net.layers.iter().enumerate() {
                let aw = &anchor.params.layers[l].w;
                let ab = &anchor.params.layers[l].b;
                let (fw, fb) = &anchor.fisher.layers[l];
                let (gw, gb) = &mut grads.layers[l];
                for i in 0..layer.w.len() {
                    let d = layer.w[i] - aw[i];
                    loss += 0.5 * lam * fw[i] * d * d;
                    gw[i] += lam * fw[i] * d;
                }
                for i in 0..layer.b.len() {
                    let d = layer.b[i] - ab[i];
                    loss += 0.5 * lam * fb[i] * d * d;
                    gb[i] += lam * fb[i] * d;
                }
            }
        }
        loss
    }
}

/// Fisher diagonal from explicit (x, y) pairs: the mean over examples of the
/// squared score `(d log p(y|x; theta) / d theta)^2`.
pub fn estimate_fisher_with_labels(
    net: &NetParams,
    x: &Matrix,
    y: &[usize],
) -> Result<FisherDiag> {
    if x.rows() == 0 {
        return Err(Error::Input(
            "fisher estimate needs at least one example".into(),
        ));
    }
    let mut fisher = Grads::zeros_like(net);
    let inv_n = 1.0 / x.rows() as f64;
    for i in 0..x.rows() {
        let xi = x.select_rows(&[i]);
        let cache = forward(net, &xi)?;
        // For a single row the cross-entropy gradient is minus the score;
        // the square makes the sign irrelevant.
        let (_, dlogits) = softmax_xent_grad(cache.logits(), &y[i..i + 1])?;
        let g = backward(net, &cache, &dlogits);
        for (l, (fw, fb)) in fisher.layers.iter_mut().enumerate() {
            let (gw, gb) = &g.layers[l];
            for (f, gi) in fw.iter_mut().zip(gw) {
                *f += gi * gi * inv_n;
            }
            for (f, gi) in fb.iter_mut().zip(gb) {
                *f += gi * gi * inv_n;
            }
        }
    }
    Ok(fisher)
}

/// Diagonal Fisher over `n_samples` session examples, labels drawn from the
/// model's own softmax. Requesting more samples than the session holds
/// clamps to the session size (with a note on stderr).
pub fn estimate_fisher(
    net: &NetParams,
    x: &Matrix,
    n_samples: usize,
    seed: u64,
) -> Result<FisherDiag> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::Input(
            "fisher estimate needs at least one example".into(),
        ));
    }
    let mut take = n_samples;
    if take > n {
        eprintln!("fisher: clamping n_samples {take} to session size {n}");
        take = n;
    }
    let mut r = rng::stream(seed, "fisher");
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut r);
    order.truncate(take);
    order.sort_unstable();

    let xs = x.select_rows(&order);
    let cache = forward(net, &xs)?;
    let probs = softmax_rows(cache.logits());
    let mut ys = Vec::with_capacity(take);
    for i in 0..take {
        let u: f64 = r.random();
        let row = probs.row(i);
        let mut cum = 0.0;
        let mut label = row.len() - 1;
        for (c, &p) in row.iter().enumerate() {
            cum += p;
            if u < cum {
                label = c;
                break;
            }
        }
        ys.push(label);
    }
    estimate_fisher_with_labels(net, &xs, &ys)
}

/// Combined loss and gradient: task cross-entropy plus every anchor's
/// quadratic penalty. With an empty state this is exactly the plain loss.
pub fn ewc_loss_grad(
    net: &NetParams,
    x: &Matrix,
    y: &[usize],
    state: &EwcState,
) -> Result<(f64, Grads)> {
    let (mut loss, mut grads) = loss_grad(net, x, y)?;
    loss += state.loss_and_grad(net, &mut grads);
    Ok((loss, grads))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EwcSettings {
    pub base: MlpSettings,
    pub lambda: f64,
    pub fisher_samples: usize,
    /// Keep one anchor per session instead of folding them together.
    pub per_session_anchors: bool,
}

impl Default for EwcSettings {
    fn default() -> Self {
        let base = MlpSettings {
            optimizer: crate::nncore::OptimKind::Adam,
            learning_rate: 2e-4,
            batch_size: 250,
            ..MlpSettings::default()
        };
        EwcSettings {
            base,
            lambda: 400.0,
            fisher_samples: 1024,
            per_session_anchors: false,
        }
    }
}

/// The EWC learner: the MLP baseline plus anchor penalties.
pub struct EwcLearner {
    settings: EwcSettings,
    seed: u64,
    net: NetParams,
    state: EwcState,
    tracker: SessionTracker,
}

impl EwcLearner {
    pub fn new(input_dim: usize, n_classes: usize, settings: EwcSettings, seed: u64) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&settings.base.hidden);
        dims.push(n_classes);
        let net = NetParams::new(&dims, &mut rng::stream(seed, "init"));
        EwcLearner {
            settings,
            seed,
            net,
            state: EwcState::default(),
            tracker: SessionTracker::default(),
        }
    }

    pub fn net(&self) -> &NetParams {
        &self.net
    }

    pub fn state(&self) -> &EwcState {
        &self.state
    }
}

impl Learner for EwcLearner {
    fn model_id(&self) -> &'static str {
        "ewc"
    }

    fn train_session(&mut self, session: &StudySession) -> Result<()> {
        self.tracker.expect(session)?;
        let (x, y) = session.train();
        let s = session_seed(self.seed, session.id);
        let (tx, ty, vx, vy) = val_split(&x, &y, self.settings.base.val_fraction, s);
        let state = std::mem::take(&mut self.state);
        let outcome = train(
            &mut self.net,
            &tx,
            &ty,
            &vx,
            &vy,
            &self.settings.base.train_config(s),
            self.settings.base.optimizer_settings(),
            Some(&state),
        );
        self.state = state;
        outcome?;

        let n_samples = self.settings.fisher_samples.min(x.rows());
        let fisher = estimate_fisher(&self.net, &x, n_samples, s)?;
        self.state
            .consolidate(&self.net, fisher, self.settings.lambda);
        if !self.settings.per_session_anchors {
            self.state.merge_anchors();
        }
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
        let n = self.net.n_params() as u64;
        MemoryLedger {
            model_bytes: 8 * n,
            // each anchor stores a parameter snapshot and a Fisher diagonal
            aux_bytes: self.state.anchors.len() as u64 * 2 * 8 * n,
        }
    }
}
