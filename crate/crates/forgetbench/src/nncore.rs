//! Dense-network engine: forward pass, backprop, optimizers, early stopping.
//!
//! Hidden layers use ReLU, the output layer is linear (logits). Every
//! parameter carries a trainable flag; frozen entries are bit-identical
//! before and after any optimizer step, which is what the path-freezing and
//! fixed-expansion learners rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng;

/// One dense layer: weights `[fan_out x fan_in]` row-major, bias `[fan_out]`,
/// plus a trainable mask of the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_train: Vec<bool>,
    pub b_train: Vec<bool>,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        DenseLayer {
            fan_in,
            fan_out,
            w: vec![0.0; fan_in * fan_out],
            b: vec![0.0; fan_out],
            w_train: vec![true; fan_in * fan_out],
            b_train: vec![true; fan_out],
        }
    }

    /// He-uniform init: w ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero bias.
    pub fn he_uniform<R: rand::Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let mut layer = DenseLayer::zeros(fan_in, fan_out);
        for w in layer.w.iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.w_train.fill(trainable);
        self.b_train.fill(trainable);
    }
}

/// The full parameter set of a network: an ordered chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<DenseLayer>,
}

impl NetParams {
    /// Builds a net with the given layer sizes, e.g. `[784, 400, 400, 10]`.
    pub fn new<R: rand::Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::he_uniform(w[0], w[1], rng))
            .collect();
        NetParams { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let net = NetParams { layers };
        net.check_chain()?;
        Ok(net)
    }

    /// Adjacent layer shapes must chain: fan_in of layer k+1 == fan_out of k.
    pub fn check_chain(&self) -> Result<()> {
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[1].fan_in != pair[0].fan_out {
                return Err(Error::shape(
                    format!("layer {}", k + 1),
                    format!("fan_in {}", pair[0].fan_out),
                    format!("fan_in {}", pair[1].fan_in),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    /// Flat parameter access in (w then b, layer by layer) order.
    /// Used by the finite-difference oracles in tests.
    pub fn get_param(&self, mut k: usize) -> f64 {
        for layer in &self.layers {
            if k < layer.w.len() {
                return layer.w[k];
            }
            k -= layer.w.len();
            if k < layer.b.len() {
                return layer.b[k];
            }
            k -= layer.b.len();
        }
        panic!("param index out of range");
    }

    pub fn set_param(&mut self, mut k: usize, v: f64) {
        for layer in &mut self.layers {
            if k < layer.w.len() {
                layer.w[k] = v;
                return;
            }
            k -= layer.w.len();
            if k < layer.b.len() {
                layer.b[k] = v;
                return;
            }
            k -= layer.b.len();
        }
        panic!("param index out of range");
    }
}

/// Forward-pass cache: the input plus every layer's post-activation
/// (ReLU for hidden layers, raw logits for the last).
#[derive(Debug)]
pub struct Activations {
    pub input: Matrix,
    pub post: Vec<Matrix>,
}

impl Activations {
    pub fn logits(&self) -> &Matrix {
        self.post.last().unwrap()
    }
}

/// Forward pass over a batch. Hidden layers apply ReLU, the last layer is
/// linear. Returns logits together with the cache needed by `backward`.
pub fn forward(net: &NetParams, x: &Matrix) -> Result<Activations> {
    if x.cols() != net.input_dim() {
        return Err(Error::shape(
            "forward input (layer 0)",
            format!("{} columns", net.input_dim()),
            format!("{} columns", x.cols()),
        ));
    }
    let n = x.rows();
    let last = net.layers.len() - 1;
    let mut post = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let inp = if l == 0 { x } else { &post[l - 1] };
        if inp.cols() != layer.fan_in {
            return Err(Error::shape(
                format!("forward at layer {l}"),
                format!("{} inputs", layer.fan_in),
                format!("{} inputs", inp.cols()),
            ));
        }
        let mut out = Matrix::zeros(n, layer.fan_out);
        for i in 0..n {
            let xi = inp.row(i);
            let oi = out.row_mut(i);
            for o in 0..layer.fan_out {
                let z = dot(&layer.w[o * layer.fan_in..(o + 1) * layer.fan_in], xi) + layer.b[o];
                oi[o] = if l == last { z } else { z.max(0.0) };
            }
        }
        post.push(out);
    }
    Ok(Activations {
        input: x.clone(),
        post,
    })
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) against integer labels, and the
/// gradient wrt the logits. Gradient rows sum to zero.
pub fn softmax_xent_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_xent_grad labels",
            format!("{n} labels"),
            format!("{} labels", labels.len()),
        ));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Input(format!(
                "label {y} at row {i} out of range for {c} classes"
            )));
        }
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        loss -= row[y].max(1e-300).ln();
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Per-layer gradients, shapes matching `NetParams`.
#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grads {
    pub fn zeros_like(net: &NetParams) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn get_param(&self, mut k: usize) -> f64 {
        for (dw, db) in &self.layers {
            if k < dw.len() {
                return dw[k];
            }
            k -= dw.len();
            if k < db.len() {
                return db[k];
            }
            k -= db.len();
        }
        panic!("grad index out of range");
    }
}

/// Backprop through the cached activations given dL/dlogits.
pub fn backward(net: &NetParams, cache: &Activations, dlogits: &Matrix) -> Grads {
    let n = dlogits.rows();
    let last = net.layers.len() - 1;
    let mut grads = Grads::zeros_like(net);
    // dL/d(post-activation of current layer), updated as we walk backwards.
    let mut dout = dlogits.clone();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let inp = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let (dw, db) = &mut grads.layers[l];
        let mut dinp = Matrix::zeros(n, layer.fan_in);
        for i in 0..n {
            let xi = inp.row(i);
            let di = dout.row(i);
            let post_i = cache.post[l].row(i);
            let dinp_i = dinp.row_mut(i);
            for o in 0..layer.fan_out {
                // Through ReLU for hidden layers; identity at the output.
                let g = if l == last {
                    di[o]
                } else if post_i[o] > 0.0 {
                    di[o]
                } else {
                    0.0
                };
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                let wrow = &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in];
                axpy(g, xi, &mut dw[o * layer.fan_in..(o + 1) * layer.fan_in]);
                axpy(g, wrow, dinp_i);
            }
        }
        dout = dinp;
    }
    grads
}

/// Task loss + gradients in one call: forward, cross-entropy, backward.
pub fn loss_grad(net: &NetParams, x: &Matrix, y: &[usize]) -> Result<(f64, Grads)> {
    let cache = forward(net, x)?;
    let (loss, dlogits) = softmax_xent_grad(cache.logits(), y)?;
    Ok((loss, backward(net, &cache, &dlogits)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
    Nadam,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerSettings {
    pub fn new(kind: OptimKind, lr: f64) -> Self {
        OptimizerSettings {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment accumulators matching the net's
/// shapes, plus the step counter. Accumulators start at zero.
///
/// Update rules per step t (for trainable entries only):
///
/// SGD:   theta -= lr * g
/// Adam:  m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
///        mhat = m/(1-b1^t);    vhat = v/(1-b2^t)
///        theta -= lr * mhat / (sqrt(vhat) + eps)
/// Nadam: as Adam, but with Nesterov momentum on the first moment:
///        theta -= lr * (b1*mhat + (1-b1)*g/(1-b1^t)) / (sqrt(vhat) + eps)
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub settings: OptimizerSettings,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(settings: OptimizerSettings, net: &NetParams) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = net
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        OptimizerState {
            settings,
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
        }
    }
}

/// Applies one optimizer step. Only mask-trainable entries change; frozen
/// entries (and their accumulators) are left untouched.
pub fn step(net: &mut NetParams, grads: &Grads, opt: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::shape(
            "step",
            format!("{} layers", net.layers.len()),
            format!("{} layers", grads.layers.len()),
        ));
    }
    for (l, layer) in net.layers.iter().enumerate() {
        if grads.layers[l].0.len() != layer.w.len() || grads.layers[l].1.len() != layer.b.len() {
            return Err(Error::shape(
                format!("step at layer {l}"),
                format!("w {} b {}", layer.w.len(), layer.b.len()),
                format!("w {} b {}", grads.layers[l].0.len(), grads.layers[l].1.len()),
            ));
        }
    }
    opt.step_count += 1;
    let t = opt.step_count;
    let s = opt.settings;
    let bc1 = 1.0 - s.beta1.powi(t as i32);
    let bc2 = 1.0 - s.beta2.powi(t as i32);

    for (l, layer) in net.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[l];
        let (mw, mb) = &mut opt.m[l];
        let (vw, vb) = &mut opt.v[l];
        update_slice(&mut layer.w, &layer.w_train, gw, mw, vw, s, bc1, bc2);
        update_slice(&mut layer.b, &layer.b_train, gb, mb, vb, s, bc1, bc2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    theta: &mut [f64],
    mask: &[bool],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    s: OptimizerSettings,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        if !mask[i] {
            continue;
        }
        match s.kind {
            OptimKind::Sgd => {
                theta[i] -= s.lr * g[i];
            }
            OptimKind::Adam => {
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= s.lr * mhat / (vhat.sqrt() + s.eps);
            }
            OptimKind::Nadam => {
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let nesterov = s.beta1 * mhat + (1.0 - s.beta1) * g[i] / bc1;
                theta[i] -= s.lr * nesterov / (vhat.sqrt() + s.eps);
            }
        }
    }
}

/// What early stopping watches on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValAccuracy,
    ValLoss,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub monitor: Monitor,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            monitor: Monitor::ValAccuracy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Anything trainable by the shared mini-batch / early-stopping loop.
pub trait BatchModel {
    /// One gradient step on the batch; returns the batch task loss.
    fn train_batch(&mut self, x: &Matrix, y: &[usize]) -> Result<f64>;
    /// The monitored validation metric.
    fn metric(&self, x: &Matrix, y: &[usize], monitor: Monitor) -> Result<f64>;
    /// Remember the current parameters as the best-so-far snapshot.
    fn save_checkpoint(&mut self);
    /// Restore the remembered snapshot.
    fn load_checkpoint(&mut self);
}

/// Mini-batch training with early stopping.
///
/// Stops at `max_epochs` or after `patience` epochs without validation
/// improvement, and leaves the model at its best-validation snapshot.
/// Fully deterministic for a fixed `cfg.seed` (shuffle order included).
pub fn train_model<M: BatchModel>(
    model: &mut M,
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    cfg: &TrainConfig,
) -> Result<EpochLog> {
    cfg.validate()?;
    let n = train_x.rows();
    if n == 0 {
        return Err(Error::Input("empty training data".into()));
    }
    let mut shuffle_rng = rng::stream(cfg.seed, "train-shuffle");
    let mut order: Vec<usize> = (0..n).collect();

    let maximize = cfg.monitor == Monitor::ValAccuracy;
    let mut best = if maximize {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        rng::shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = train_x.select_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            loss_sum += model.train_batch(&bx, &by)?;
            batches += 1;
        }
        let val_metric = model.metric(val_x, val_y, cfg.monitor)?;
        log.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_metric,
        });
        let improved = if maximize {
            val_metric > best
        } else {
            val_metric < best
        };
        if improved {
            best = val_metric;
            best_epoch = epoch;
            since_best = 0;
            model.save_checkpoint();
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.load_checkpoint();
    Ok(EpochLog {
        epochs: log,
        best_epoch,
    })
}

/// Extra loss term added on top of the task loss (e.g. a quadratic anchor
/// penalty). Implementations add their gradient into `grads` and return the
/// penalty's loss value.
pub trait Penalty {
    fn loss_and_grad(&self, net: &NetParams, grads: &mut Grads) -> f64;
}

/// A dense net + optimizer (+ optional penalty) as a `BatchModel`.
pub struct MlpModel<'a> {
    pub net: &'a mut NetParams,
    pub opt: OptimizerState,
    pub penalty: Option<&'a dyn Penalty>,
    checkpoint: Option<NetParams>,
}

impl<'a> MlpModel<'a> {
    pub fn new(
        net: &'a mut NetParams,
        settings: OptimizerSettings,
        penalty: Option<&'a dyn Penalty>,
    ) -> Self {
        let opt = OptimizerState::new(settings, net);
        MlpModel {
            net,
            opt,
            penalty,
            checkpoint: None,
        }
    }
}

impl BatchModel for MlpModel<'_> {
    fn train_batch(&mut self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let (mut loss, mut grads) = loss_grad(self.net, x, y)?;
        if let Some(p) = self.penalty {
            loss += p.loss_and_grad(self.net, &mut grads);
        }
        step(self.net, &grads, &mut self.opt)?;
        Ok(loss)
    }

    fn metric(&self, x: &Matrix, y: &[usize], monitor: Monitor) -> Result<f64> {
        let cache = forward(self.net, x)?;
        match monitor {
            Monitor::ValAccuracy => Ok(accuracy_from_logits(cache.logits(), y)),
            Monitor::ValLoss => {
                let (mut loss, _) = softmax_xent_grad(cache.logits(), y)?;
                if let Some(p) = self.penalty {
                    let mut scratch = Grads::zeros_like(self.net);
                    loss += p.loss_and_grad(self.net, &mut scratch);
                }
                Ok(loss)
            }
        }
    }

    fn save_checkpoint(&mut self) {
        self.checkpoint = Some(self.net.clone());
    }

    fn load_checkpoint(&mut self) {
        if let Some(snap) = &self.checkpoint {
            *self.net = snap.clone();
        }
    }
}

/// Trains `net` in place with early stopping; the plain dense-net loop.
pub fn train(
    net: &mut NetParams,
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    cfg: &TrainConfig,
    settings: OptimizerSettings,
    penalty: Option<&dyn Penalty>,
) -> Result<EpochLog> {
    let mut model = MlpModel::new(net, settings, penalty);
    train_model(&mut model, train_x, train_y, val_x, val_y, cfg)
}

pub fn accuracy_from_logits(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if crate::linalg::argmax(logits.row(i)) == y {
            hits += 1;
        }
    }
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn tiny_net(dims: &[usize], seed: u64) -> NetParams {
        let mut r = stream(seed, "init");
        NetParams::new(dims, &mut r)
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        // identity-weight single layer, zero bias, x = [1, -1] -> logits [1, -1]
        let mut layer = DenseLayer::zeros(2, 2);
        layer.w = vec![1.0, 0.0, 0.0, 1.0];
        let net = NetParams::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -1.0]]);
        let out = forward(&net, &x).unwrap();
        assert_eq!(out.logits().row(0), &[1.0, -1.0]);
    }

    #[test]
    fn zero_weight_hidden_layer_gives_constant_logits() {
        // one hidden layer all-zero weights, bias b -> logits constant:
        // output layer applied to ReLU(b).
        let mut hidden = DenseLayer::zeros(3, 2);
        hidden.b = vec![0.5, -0.25];
        let mut out_layer = DenseLayer::zeros(2, 2);
        out_layer.w = vec![1.0, 1.0, 2.0, 0.0];
        out_layer.b = vec![0.1, 0.2];
        let net = NetParams::from_layers(vec![hidden, out_layer]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.0, 9.0]]);
        let cache = forward(&net, &x).unwrap();
        // ReLU(b) = [0.5, 0]; logits = [0.5 + 0.1, 1.0 + 0.2] for every row.
        for i in 0..2 {
            assert!((cache.logits().get(i, 0) - 0.6).abs() < 1e-15);
            assert!((cache.logits().get(i, 1) - 1.2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        // random 2-layer net on 3 inputs vs an independent straight-line
        // evaluation of the two matrix products.
        let net = tiny_net(&[3, 4, 2], 99);
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 0.7]]);
        let cache = forward(&net, &x).unwrap();

        let l0 = &net.layers[0];
        let mut h = vec![0.0; 4];
        for o in 0..4 {
            let mut z = l0.b[o];
            for i in 0..3 {
                z += l0.w[o * 3 + i] * x.get(0, i);
            }
            h[o] = z.max(0.0);
        }
        let l1 = &net.layers[1];
        for o in 0..2 {
            let mut z = l1.b[o];
            for i in 0..4 {
                z += l1.w[o * 4 + i] * h[i];
            }
            assert!((cache.logits().get(0, o) - z).abs() < 1e-12, "output {o}");
        }
    }

    #[test]
    fn forward_shape_error_names_layer() {
        let net = tiny_net(&[3, 2], 1);
        let x = Matrix::zeros(1, 5);
        let err = forward(&net, &x).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn uniform_logits_loss_is_ln2() {
        let logits = Matrix::from_rows(&[vec![0.7, 0.7]]);
        let (loss, _) = softmax_xent_grad(&logits, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let logits = Matrix::from_rows(&[vec![40.0, 0.0, 0.0]]);
        let (loss, _) = softmax_xent_grad(&logits, &[0]).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn xent_grad_rows_sum_to_zero_and_match_finite_differences() {
        let logits = Matrix::from_rows(&[vec![0.2, -0.4, 1.1], vec![-0.9, 0.3, 0.05]]);
        let labels = [2usize, 0];
        let (_, grad) = softmax_xent_grad(&logits, &labels).unwrap();
        for i in 0..2 {
            let s: f64 = grad.row(i).iter().sum();
            assert!(s.abs() < 1e-12);
        }
        // central finite differences at step 1e-5
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus.set(i, j, plus.get(i, j) + h);
                let mut minus = logits.clone();
                minus.set(i, j, minus.get(i, j) - h);
                let (lp, _) = softmax_xent_grad(&plus, &labels).unwrap();
                let (lm, _) = softmax_xent_grad(&minus, &labels).unwrap();
                let num = (lp - lm) / (2.0 * h);
                assert!(
                    (num - grad.get(i, j)).abs() < 1e-6,
                    "({i},{j}): {} vs {}",
                    num,
                    grad.get(i, j)
                );
            }
        }
    }

    #[test]
    fn label_out_of_range_is_input_error() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(
            softmax_xent_grad(&logits, &[2]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Matrix::from_rows(&[vec![5.0, -3.0, 0.2], vec![900.0, 899.0, -800.0]]);
        let p = softmax_rows(&logits);
        for i in 0..2 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let net = tiny_net(&[4, 5, 3], 42);
        let x = Matrix::from_rows(&[
            vec![0.1, -0.3, 0.8, 0.05],
            vec![-0.6, 0.2, 0.0, 1.1],
            vec![0.9, 0.9, -0.9, 0.4],
        ]);
        let y = [0usize, 2, 1];
        let (_, grads) = loss_grad(&net, &x, &y).unwrap();
        let h = 1e-6;
        for k in 0..net.n_params() {
            let orig = net.get_param(k);
            let mut plus = net.clone();
            plus.set_param(k, orig + h);
            let mut minus = net.clone();
            minus.set_param(k, orig - h);
            let (lp, _) = loss_grad(&plus, &x, &y).unwrap();
            let (lm, _) = loss_grad(&minus, &x, &y).unwrap();
            let num = (lp - lm) / (2.0 * h);
            let ana = grads.get_param(k);
            let denom = num.abs().max(ana.abs()).max(1e-4);
            assert!(
                (num - ana).abs() / denom < 1e-5,
                "param {k}: numeric {num} vs analytic {ana}"
            );
        }
    }

    #[test]
    fn all_frozen_mask_leaves_net_unchanged() {
        let mut net = tiny_net(&[3, 4, 2], 5);
        for layer in &mut net.layers {
            layer.set_trainable(false);
        }
        let before = net.clone();
        let mut grads = Grads::zeros_like(&net);
        for (dw, db) in &mut grads.layers {
            dw.fill(1.0);
            db.fill(1.0);
        }
        let mut opt = OptimizerState::new(OptimizerSettings::new(OptimKind::Adam, 0.1), &net);
        step(&mut net, &grads, &mut opt).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_step_moves_by_lr_times_grad() {
        let mut net = tiny_net(&[2, 2], 8);
        let before = net.clone();
        let mut grads = Grads::zeros_like(&net);
        for (dw, db) in &mut grads.layers {
            dw.fill(1.0);
            db.fill(1.0);
        }
        let mut opt = OptimizerState::new(OptimizerSettings::new(OptimKind::Sgd, 0.1), &net);
        step(&mut net, &grads, &mut opt).unwrap();
        for k in 0..net.n_params() {
            assert!((net.get_param(k) - (before.get_param(k) - 0.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_matches_hand_rolled_recurrence_over_three_steps() {
        // scalar Adam recurrence computed independently, constant grad g
        let g = 0.7;
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
        let mut theta_ref = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=3u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1_pow(b1, t));
            let vhat = v / (1.0 - b1_pow(b2, t));
            theta_ref -= lr * mhat / (vhat.sqrt() + eps);
        }

        let mut layer = DenseLayer::zeros(1, 1);
        layer.w[0] = 0.5;
        layer.b_train[0] = false;
        let mut net = NetParams::from_layers(vec![layer]).unwrap();
        let mut grads = Grads::zeros_like(&net);
        grads.layers[0].0[0] = g;
        let mut opt = OptimizerState::new(OptimizerSettings::new(OptimKind::Adam, lr), &net);
        for _ in 0..3 {
            step(&mut net, &grads, &mut opt).unwrap();
        }
        assert!(
            (net.layers[0].w[0] - theta_ref).abs() < 1e-15,
            "{} vs {}",
            net.layers[0].w[0],
            theta_ref
        );
        assert_eq!(opt.step_count, 3);
    }

    fn b1_pow(b: f64, t: u32) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn nadam_first_step_matches_formula() {
        let g = -0.3;
        let (b1, b2, eps, lr): (f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 0.05);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1);
        let vhat = v / (1.0 - b2);
        let nesterov = b1 * mhat + (1.0 - b1) * g / (1.0 - b1);
        let expected = 1.0 - lr * nesterov / (vhat.sqrt() + eps);

        let mut layer = DenseLayer::zeros(1, 1);
        layer.w[0] = 1.0;
        layer.b_train[0] = false;
        let mut net = NetParams::from_layers(vec![layer]).unwrap();
        let mut grads = Grads::zeros_like(&net);
        grads.layers[0].0[0] = g;
        let mut opt = OptimizerState::new(OptimizerSettings::new(OptimKind::Nadam, lr), &net);
        step(&mut net, &grads, &mut opt).unwrap();
        assert!((net.layers[0].w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn training_fits_separable_blobs() {
        // Two well-separated clusters; verify separability with a brute-force
        // nearest-mean probe first, then expect the net to fit them.
        let mut r = stream(77, "blobtest");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut g = rng::Gaussian::new();
        for i in 0..60 {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            xs.push(vec![cx + 0.1 * g.sample(&mut r), 0.1 * g.sample(&mut r)]);
            ys.push(c);
        }
        let x = Matrix::from_rows(&xs);
        // nearest-mean oracle: means at +-2 -> all points closer to own mean
        for (row, &y) in x.iter_rows().zip(&ys) {
            let d0 = (row[0] + 2.0).abs();
            let d1 = (row[0] - 2.0).abs();
            assert_eq!(if d0 < d1 { 0 } else { 1 }, y);
        }
        let mut net = tiny_net(&[2, 8, 2], 3);
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 50,
            patience: 50,
            monitor: Monitor::ValAccuracy,
            seed: 123,
        };
        train(
            &mut net,
            &x,
            &ys,
            &x,
            &ys,
            &cfg,
            OptimizerSettings::new(OptimKind::Adam, 0.05),
            None,
        )
        .unwrap();
        let cache = forward(&net, &x).unwrap();
        assert!((accuracy_from_logits(cache.logits(), &ys) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn patience_one_on_perfect_val_stops_within_two_epochs() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0]]);
        let y = [1usize, 0];
        let mut layer = DenseLayer::zeros(1, 2);
        layer.w = vec![-5.0, 5.0];
        let mut net = NetParams::from_layers(vec![layer]).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 100,
            patience: 1,
            monitor: Monitor::ValAccuracy,
            seed: 0,
        };
        let log = train(
            &mut net,
            &x,
            &y,
            &x,
            &y,
            &cfg,
            OptimizerSettings::new(OptimKind::Sgd, 0.0),
            None,
        )
        .unwrap();
        assert!(log.epochs.len() <= 2, "ran {} epochs", log.epochs.len());
    }

    #[test]
    fn same_seed_trains_to_identical_weights() {
        let mut r = stream(4, "data");
        let mut g = rng::Gaussian::new();
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![g.sample(&mut r), g.sample(&mut r), g.sample(&mut r)])
            .collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let x = Matrix::from_rows(&xs);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 12,
            patience: 12,
            monitor: Monitor::ValAccuracy,
            seed: 9,
        };
        let run = || {
            let mut net = tiny_net(&[3, 6, 3], 21);
            train(
                &mut net,
                &x,
                &ys,
                &x,
                &ys,
                &cfg,
                OptimizerSettings::new(OptimKind::Nadam, 0.01),
                None,
            )
            .unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_training_data_is_input_error() {
        let mut net = tiny_net(&[2, 2], 0);
        let x = Matrix::zeros(0, 2);
        let err = train(
            &mut net,
            &x,
            &[],
            &x,
            &[],
            &TrainConfig::default(),
            OptimizerSettings::new(OptimKind::Adam, 1e-3),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn frozen_params_bit_identical_through_training() {
        let mut net = tiny_net(&[3, 5, 2], 13);
        // freeze an arbitrary scatter of entries
        let mut mask_rng = stream(13, "mask");
        for layer in &mut net.layers {
            for m in layer.w_train.iter_mut() {
                *m = mask_rng.random::<f64>() < 0.5;
            }
            for m in layer.b_train.iter_mut() {
                *m = mask_rng.random::<f64>() < 0.5;
            }
        }
        let before = net.clone();
        let mut r = stream(14, "data");
        let xs: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![r.random::<f64>(), r.random::<f64>(), r.random::<f64>()])
            .collect();
        let ys: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let x = Matrix::from_rows(&xs);
        let cfg = TrainConfig {
            batch_size: 10,
            max_epochs: 8,
            patience: 8,
            monitor: Monitor::ValAccuracy,
            seed: 2,
        };
        train(
            &mut net,
            &x,
            &ys,
            &x,
            &ys,
            &cfg,
            OptimizerSettings::new(OptimKind::Adam, 0.05),
            None,
        )
        .unwrap();
        for (l, layer) in net.layers.iter().enumerate() {
            for (i, &trainable) in layer.w_train.iter().enumerate() {
                if !trainable {
                    assert_eq!(layer.w[i].to_bits(), before.layers[l].w[i].to_bits());
                }
            }
            for (i, &trainable) in layer.b_train.iter().enumerate() {
                if !trainable {
                    assert_eq!(layer.b[i].to_bits(), before.layers[l].b[i].to_bits());
                }
            }
        }
    }
}
