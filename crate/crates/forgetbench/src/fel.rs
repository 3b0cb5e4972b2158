//! Fixed expansion layer: a two-hidden-layer net whose second layer is a
//! frozen sparse mix of excitatory and inhibitory weights, with winner-gated
//! output.
//!
//! Each expansion unit connects to a fixed random subset of first-layer
//! units, the connection weights never train, and per example only the k
//! units with the largest pre-activation pass their ReLU output to the
//! classifier. Gradients flow only through those winners, so each example
//! updates a localized slice of the network.

use serde::{Deserialize, Serialize};

use crate::data::StudySession;
use crate::error::{Error, Result};
use crate::learner::{
    mean_per_class_accuracy, predict_restricted, session_seed, val_split, Learner, MemoryLedger,
    SessionTracker,
};
use crate::linalg::{dot, Matrix};
use crate::nncore::{
    accuracy_from_logits, softmax_xent_grad, train_model, BatchModel, DenseLayer, Grads, Monitor,
    NetParams, OptimKind, OptimizerSettings, OptimizerState, TrainConfig,
};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FelSettings {
    pub hidden_units: usize,
    pub fel_units: usize,
    pub fan_in: usize,
    pub excitatory_fraction: f64,
    /// Winners per example; 0 means the default of 2% of the expansion units.
    pub winners: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for FelSettings {
    fn default() -> Self {
        FelSettings {
            hidden_units: 400,
            fel_units: 1200,
            fan_in: 10,
            excitatory_fraction: 0.5,
            winners: 0,
            learning_rate: 2e-2,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            val_fraction: 0.1,
        }
    }
}

impl FelSettings {
    pub fn effective_winners(&self) -> usize {
        if self.winners > 0 {
            self.winners
        } else {
            ((self.fel_units as f64) * 0.02).ceil() as usize
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in > self.hidden_units {
            return Err(Error::Config(format!(
                "fan_in {} exceeds hidden units {}",
                self.fan_in, self.hidden_units
            )));
        }
        let k = self.effective_winners();
        if k < 1 || k > self.fel_units {
            return Err(Error::Config(format!(
                "winners {k} out of range 1..={}",
                self.fel_units
            )));
        }
        Ok(())
    }
}

/// The frozen sparse expansion matrix: per unit, `fan_in` (index, weight)
/// connections into the first hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FelWeights {
    pub n_units: usize,
    pub fan_in: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl FelWeights {
    pub fn unit(&self, u: usize) -> (&[usize], &[f64]) {
        let s = u * self.fan_in;
        (&self.indices[s..s + self.fan_in], &self.values[s..s + self.fan_in])
    }
}

/// Builds the fixed sparse matrix: each unit picks `fan_in` distinct
/// first-layer units; connections split between positive (excitatory) and
/// negative (inhibitory) weights per the configured fraction, magnitudes
/// uniform in (0, 1].
pub fn build_fel_weights(cfg: &FelSettings, seed: u64) -> Result<FelWeights> {
    cfg.validate()?;
    let mut r = rng::stream(seed, "fel");
    let n_pos = ((cfg.fan_in as f64) * cfg.excitatory_fraction).round() as usize;
    let mut indices = Vec::with_capacity(cfg.fel_units * cfg.fan_in);
    let mut values = Vec::with_capacity(cfg.fel_units * cfg.fan_in);
    let mut pool: Vec<usize> = (0..cfg.hidden_units).collect();
    for _ in 0..cfg.fel_units {
        rng::shuffle(&mut pool, &mut r);
        let mut chosen: Vec<usize> = pool[..cfg.fan_in].to_vec();
        chosen.sort_unstable();
        for (slot, idx) in chosen.into_iter().enumerate() {
            use rand::Rng;
            let magnitude = 1.0 - r.random::<f64>(); // (0, 1]
            let sign = if slot < n_pos { 1.0 } else { -1.0 };
            indices.push(idx);
            values.push(sign * magnitude);
        }
    }
    Ok(FelWeights {
        n_units: cfg.fel_units,
        fan_in: cfg.fan_in,
        indices,
        values,
    })
}

/// Forward cache for one batch through the expansion net.
#[derive(Debug)]
pub struct FelCache {
    pub hidden: Matrix,
    pub fel_pre: Matrix,
    pub gated: Matrix,
    pub logits: Matrix,
    /// Winner unit indices per example, ascending.
    pub winners: Vec<Vec<usize>>,
}

/// The expansion network: trainable input layer, frozen sparse expansion,
/// trainable classifier.
#[derive(Debug, Clone)]
pub struct FelNet {
    pub input_layer: DenseLayer,
    pub fel: FelWeights,
    pub classifier: DenseLayer,
}

impl FelNet {
    pub fn new(input_dim: usize, n_classes: usize, cfg: &FelSettings, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, "init");
        let input_layer = DenseLayer::he_uniform(input_dim, cfg.hidden_units, &mut r);
        let classifier = DenseLayer::he_uniform(cfg.fel_units, n_classes, &mut r);
        let fel = build_fel_weights(cfg, seed)?;
        Ok(FelNet {
            input_layer,
            fel,
            classifier,
        })
    }

    pub fn n_params(&self) -> usize {
        self.input_layer.n_params() + self.fel.values.len() + self.classifier.n_params()
    }

    fn winner_set(pre: &[f64], k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..pre.len()).collect();
        order.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap().then(a.cmp(&b)));
        let mut winners = order[..k.min(pre.len())].to_vec();
        winners.sort_unstable();
        winners
    }

    /// Forward with top-k winner gating: only the k expansion units with the
    /// largest pre-activation pass ReLU output to the classifier.
    pub fn forward(&self, x: &Matrix, k: usize) -> Result<FelCache> {
        if x.cols() != self.input_layer.fan_in {
            return Err(Error::shape(
                "fel forward input",
                format!("{} columns", self.input_layer.fan_in),
                format!("{} columns", x.cols()),
            ));
        }
        let n = x.rows();
        let h_units = self.input_layer.fan_out;
        let mut hidden = Matrix::zeros(n, h_units);
        for i in 0..n {
            let xi = x.row(i);
            let hi = hidden.row_mut(i);
            for o in 0..h_units {
                let row = &self.input_layer.w[o * x.cols()..(o + 1) * x.cols()];
                hi[o] = (dot(row, xi) + self.input_layer.b[o]).max(0.0);
            }
        }
        let mut fel_pre = Matrix::zeros(n, self.fel.n_units);
        let mut gated = Matrix::zeros(n, self.fel.n_units);
        let mut winners = Vec::with_capacity(n);
        for i in 0..n {
            let hi = hidden.row(i);
            let pre_i = fel_pre.row_mut(i);
            for u in 0..self.fel.n_units {
                let (idx, vals) = self.fel.unit(u);
                let mut z = 0.0;
                for (j, v) in idx.iter().zip(vals) {
                    z += v * hi[*j];
                }
                pre_i[u] = z;
            }
            let win = Self::winner_set(fel_pre.row(i), k);
            let gi = gated.row_mut(i);
            for &u in &win {
                gi[u] = fel_pre.get(i, u).max(0.0);
            }
            winners.push(win);
        }
        let c = self.classifier.fan_out;
        let mut logits = Matrix::zeros(n, c);
        for i in 0..n {
            // classifier input is sparse: only the winners are nonzero
            let li = logits.row_mut(i);
            for o in 0..c {
                let wrow = &self.classifier.w[o * self.fel.n_units..(o + 1) * self.fel.n_units];
                let mut z = self.classifier.b[o];
                for &u in &winners[i] {
                    z += wrow[u] * gated.get(i, u);
                }
                li[o] = z;
            }
        }
        Ok(FelCache {
            hidden,
            fel_pre,
            gated,
            logits,
            winners,
        })
    }

    /// Forward with a fixed gating pattern; used by gradient oracles.
    pub fn forward_gated(&self, x: &Matrix, winners: &[Vec<usize>]) -> Result<Matrix> {
        let n = x.rows();
        let h_units = self.input_layer.fan_out;
        let mut logits = Matrix::zeros(n, self.classifier.fan_out);
        for i in 0..n {
            let xi = x.row(i);
            let mut hi = vec![0.0; h_units];
            for (o, h) in hi.iter_mut().enumerate() {
                let row = &self.input_layer.w[o * x.cols()..(o + 1) * x.cols()];
                *h = (dot(row, xi) + self.input_layer.b[o]).max(0.0);
            }
            for o in 0..self.classifier.fan_out {
                let wrow = &self.classifier.w[o * self.fel.n_units..(o + 1) * self.fel.n_units];
                let mut z = self.classifier.b[o];
                for &u in &winners[i] {
                    let (idx, vals) = self.fel.unit(u);
                    let mut pre = 0.0;
                    for (j, v) in idx.iter().zip(vals) {
                        pre += v * hi[*j];
                    }
                    z += wrow[u] * pre.max(0.0);
                }
                logits.row_mut(i)[o] = z;
            }
        }
        Ok(logits)
    }

    /// Backward through the winner gate. Gradients flow only through the
    /// winning expansion units; the sparse expansion matrix itself always
    /// receives zero gradient. Returns (input-layer grads, classifier grads)
    /// packed as a two-layer `Grads`.
    pub fn backward(&self, x: &Matrix, cache: &FelCache, dlogits: &Matrix) -> Result<Grads> {
        if dlogits.rows() != x.rows() || dlogits.cols() != self.classifier.fan_out {
            return Err(Error::shape(
                "fel backward",
                format!("{} x {}", x.rows(), self.classifier.fan_out),
                format!("{} x {}", dlogits.rows(), dlogits.cols()),
            ));
        }
        let n = x.rows();
        let d = x.cols();
        let h_units = self.input_layer.fan_out;
        let f_units = self.fel.n_units;
        let mut d_w1 = vec![0.0; self.input_layer.w.len()];
        let mut d_b1 = vec![0.0; self.input_layer.b.len()];
        let mut d_wc = vec![0.0; self.classifier.w.len()];
        let mut d_bc = vec![0.0; self.classifier.b.len()];
        let mut d_hidden = vec![0.0; h_units];
        for i in 0..n {
            let dz = dlogits.row(i);
            for (o, &g) in dz.iter().enumerate() {
                d_bc[o] += g;
                let wrow_grad = &mut d_wc[o * f_units..(o + 1) * f_units];
                for &u in &cache.winners[i] {
                    wrow_grad[u] += g * cache.gated.get(i, u);
                }
            }
            d_hidden.fill(0.0);
            for &u in &cache.winners[i] {
                if cache.fel_pre.get(i, u) <= 0.0 {
                    continue; // ReLU cut the winner's output
                }
                let mut d_act = 0.0;
                for (o, &g) in dz.iter().enumerate() {
                    d_act += g * self.classifier.w[o * f_units + u];
                }
                let (idx, vals) = self.fel.unit(u);
                for (j, v) in idx.iter().zip(vals) {
                    d_hidden[*j] += d_act * v;
                }
            }
            let xi = x.row(i);
            let hi = cache.hidden.row(i);
            for j in 0..h_units {
                if d_hidden[j] == 0.0 || hi[j] <= 0.0 {
                    continue;
                }
                let g = d_hidden[j];
                d_b1[j] += g;
                let row = &mut d_w1[j * d..(j + 1) * d];
                for (w, &xv) in row.iter_mut().zip(xi) {
                    *w += g * xv;
                }
            }
        }
        Ok(Grads {
            layers: vec![(d_w1, d_b1), (d_wc, d_bc)],
        })
    }
}

/// FelNet plus its optimizer state, trainable by the shared loop.
pub struct FelModel {
    pub net: FelNet,
    pub k: usize,
    trainable: NetParams,
    opt: OptimizerState,
    checkpoint: Option<(FelNet, NetParams)>,
}

impl FelModel {
    pub fn new(net: FelNet, k: usize, opt_settings: OptimizerSettings) -> Self {
        // the two trainable layers ride in a NetParams container so the
        // shared optimizer step applies; they are not a forward chain
        let trainable = NetParams {
            layers: vec![net.input_layer.clone(), net.classifier.clone()],
        };
        let opt = OptimizerState::new(opt_settings, &trainable);
        FelModel {
            net,
            k,
            trainable,
            opt,
            checkpoint: None,
        }
    }

    fn sync_from_trainable(&mut self) {
        self.net.input_layer = self.trainable.layers[0].clone();
        self.net.classifier = self.trainable.layers[1].clone();
    }
}

impl BatchModel for FelModel {
    fn train_batch(&mut self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let cache = self.net.forward(x, self.k)?;
        let (loss, dlogits) = softmax_xent_grad(&cache.logits, y)?;
        let grads = self.net.backward(x, &cache, &dlogits)?;
        crate::nncore::step(&mut self.trainable, &grads, &mut self.opt)?;
        self.sync_from_trainable();
        Ok(loss)
    }

    fn metric(&self, x: &Matrix, y: &[usize], monitor: Monitor) -> Result<f64> {
        let cache = self.net.forward(x, self.k)?;
        match monitor {
            Monitor::ValAccuracy => Ok(accuracy_from_logits(&cache.logits, y)),
            Monitor::ValLoss => Ok(softmax_xent_grad(&cache.logits, y)?.0),
        }
    }

    fn save_checkpoint(&mut self) {
        self.checkpoint = Some((self.net.clone(), self.trainable.clone()));
    }

    fn load_checkpoint(&mut self) {
        if let Some((net, trainable)) = &self.checkpoint {
            self.net = net.clone();
            self.trainable = trainable.clone();
        }
    }
}

/// The FEL learner: winner-gated expansion net trained per session.
pub struct FelLearner {
    settings: FelSettings,
    seed: u64,
    model: FelModel,
    tracker: SessionTracker,
}

impl FelLearner {
    pub fn new(
        input_dim: usize,
        n_classes: usize,
        settings: FelSettings,
        seed: u64,
    ) -> Result<Self> {
        let net = FelNet::new(input_dim, n_classes, &settings, seed)?;
        let k = settings.effective_winners();
        let model = FelModel::new(
            net,
            k,
            OptimizerSettings::new(OptimKind::Adam, settings.learning_rate),
        );
        Ok(FelLearner {
            settings,
            seed,
            model,
            tracker: SessionTracker::default(),
        })
    }

    pub fn net(&self) -> &FelNet {
        &self.model.net
    }

    /// Mean-per-class accuracy on labeled data, restricted to seen classes.
    pub fn mpc_accuracy(&self, x: &Matrix, y: &[usize], classes: &[usize]) -> Result<f64> {
        let preds = self.predict(x)?;
        mean_per_class_accuracy(&preds, y, classes)
    }
}

impl Learner for FelLearner {
    fn model_id(&self) -> &'static str {
        "fel"
    }

    fn train_session(&mut self, session: &StudySession) -> Result<()> {
        self.tracker.expect(session)?;
        let (x, y) = session.train();
        let s = session_seed(self.seed, session.id);
        let (tx, ty, vx, vy) = val_split(&x, &y, self.settings.val_fraction, s);
        let cfg = TrainConfig {
            batch_size: self.settings.batch_size,
            max_epochs: self.settings.max_epochs,
            patience: self.settings.patience,
            monitor: Monitor::ValAccuracy,
            seed: s,
        };
        train_model(&mut self.model, &tx, &ty, &vx, &vy, &cfg)?;
        self.tracker.complete(session);
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if self.tracker.completed() == 0 {
            return Err(Error::State("predict before any training".into()));
        }
        let cache = self.model.net.forward(x, self.model.k)?;
        Ok(predict_restricted(
            &cache.logits,
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
            model_bytes: 8 * self.model.net.n_params() as u64,
            aux_bytes: 0,
        }
    }
}
