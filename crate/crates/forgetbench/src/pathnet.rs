//! Evolutionary pathway search through a fixed modular network.
//!
//! The network is a grid of L layers x M modules; a path activates up to N
//! modules per layer and a layer's output is the elementwise sum of its
//! active modules' ReLU outputs. Each session evolves a path by binary
//! tournament (train both candidates briefly, keep the fitter, overwrite the
//! loser with a mutated winner), then the winning path's modules are frozen
//! and the session's output head is stored read-only. Prediction for a past
//! task replays its stored path and head, so earlier tasks are untouched by
//! later training.

use serde::{Deserialize, Serialize};

use crate::data::StudySession;
use crate::error::{Error, Result};
use crate::learner::{
    predict_restricted, session_seed, val_split, Learner, MemoryLedger, SessionTracker,
};
use crate::linalg::{axpy, dot, Matrix};
use crate::nncore::{
    accuracy_from_logits, softmax_xent_grad, step, train_model, BatchModel, DenseLayer, Grads,
    Monitor, NetParams, OptimKind, OptimizerSettings, OptimizerState, TrainConfig,
};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathNetTopology {
    /// Layers in the module grid (L).
    pub layers: usize,
    /// Modules per layer (M).
    pub modules: usize,
    /// Active modules per layer per path (N).
    pub active: usize,
    /// Units per module.
    pub units: usize,
}

impl Default for PathNetTopology {
    fn default() -> Self {
        PathNetTopology {
            layers: 2,
            modules: 10,
            active: 5,
            units: 80,
        }
    }
}

impl PathNetTopology {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.modules == 0 || self.units == 0 {
            return Err(Error::Config("topology dimensions must be positive".into()));
        }
        if self.active == 0 || self.active > self.modules {
            return Err(Error::Config(format!(
                "active modules {} out of range 1..={}",
                self.active, self.modules
            )));
        }
        Ok(())
    }
}

/// Per-layer module selections. Set-valued: duplicates collapse, each layer
/// keeps between 1 and N indices, all below M.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathGenotype {
    pub layers: Vec<Vec<usize>>,
}

impl PathGenotype {
    pub fn new(raw: Vec<Vec<usize>>) -> Self {
        let layers = raw
            .into_iter()
            .map(|mut l| {
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        PathGenotype { layers }
    }

    pub fn random<R: Rng>(topology: &PathNetTopology, rng: &mut R) -> Self {
        let raw = (0..topology.layers)
            .map(|_| {
                (0..topology.active)
                    .map(|_| rng.random_range(0..topology.modules))
                    .collect()
            })
            .collect();
        PathGenotype::new(raw)
    }

    /// Local mutation: each selected index is, with probability
    /// 1 / (L * N), shifted by a uniform step in {-2, -1, 1, 2} modulo M.
    pub fn mutate<R: Rng>(&self, topology: &PathNetTopology, rng: &mut R) -> Self {
        let p = 1.0 / (topology.layers * topology.active) as f64;
        let steps = [-2i64, -1, 1, 2];
        let raw = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&m| {
                        if rng.random::<f64>() < p {
                            let u = steps[rng.random_range(0..4)];
                            (m as i64 + u).rem_euclid(topology.modules as i64) as usize
                        } else {
                            m
                        }
                    })
                    .collect()
            })
            .collect();
        PathGenotype::new(raw)
    }

    pub fn is_valid(&self, topology: &PathNetTopology) -> bool {
        self.layers.len() == topology.layers
            && self.layers.iter().all(|l| {
                !l.is_empty()
                    && l.len() <= topology.active
                    && l.iter().all(|&m| m < topology.modules)
                    && l.windows(2).all(|w| w[0] < w[1])
            })
    }
}

#[derive(Debug, Clone)]
pub struct PathModule {
    pub layer: DenseLayer,
    pub trained: bool,
    pub frozen: bool,
}

/// Module grid, per-task heads, and the winning path per task.
pub struct PathNetState {
    pub topology: PathNetTopology,
    pub input_dim: usize,
    pub n_classes: usize,
    /// modules[layer][module]
    pub modules: Vec<Vec<PathModule>>,
    pub heads: Vec<DenseLayer>,
    pub winning_paths: Vec<PathGenotype>,
    /// Classes present in each task's session, for restricted prediction.
    pub task_classes: Vec<Vec<usize>>,
}

impl PathNetState {
    pub fn new(input_dim: usize, n_classes: usize, topology: PathNetTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut r = rng::stream(seed, "init");
        let modules = (0..topology.layers)
            .map(|l| {
                let fan_in = if l == 0 { input_dim } else { topology.units };
                (0..topology.modules)
                    .map(|_| PathModule {
                        layer: DenseLayer::he_uniform(fan_in, topology.units, &mut r),
                        trained: false,
                        frozen: false,
                    })
                    .collect()
            })
            .collect();
        Ok(PathNetState {
            topology,
            input_dim,
            n_classes,
            modules,
            heads: Vec::new(),
            winning_paths: Vec::new(),
            task_classes: Vec::new(),
        })
    }

    pub fn frozen_count(&self) -> usize {
        self.modules
            .iter()
            .flat_map(|l| l.iter())
            .filter(|m| m.frozen)
            .count()
    }

    pub fn module_params(&self) -> usize {
        self.modules
            .iter()
            .flat_map(|l| l.iter())
            .map(|m| m.layer.n_params())
            .sum()
    }

    fn head(&self, task: usize) -> Result<&DenseLayer> {
        if task == 0 || task > self.heads.len() {
            return Err(Error::State(format!(
                "no output head for task {task} (have {})",
                self.heads.len()
            )));
        }
        Ok(&self.heads[task - 1])
    }
}

/// Forward through a raw selection (duplicates contribute with multiplicity):
/// each layer's output is the sum of the selected modules' ReLU outputs, and
/// the task head maps the last layer to logits.
pub fn forward_on_path(
    state: &PathNetState,
    selection: &[Vec<usize>],
    task: usize,
    x: &Matrix,
) -> Result<Matrix> {
    let head = state.head(task)?;
    let n = x.rows();
    let units = state.topology.units;
    let mut h = x.clone();
    for (l, chosen) in selection.iter().enumerate() {
        let mut out = Matrix::zeros(n, units);
        for &m in chosen {
            let module = &state.modules[l][m].layer;
            for i in 0..n {
                let xi = h.row(i);
                let oi = out.row_mut(i);
                for o in 0..units {
                    let z = dot(&module.w[o * module.fan_in..(o + 1) * module.fan_in], xi)
                        + module.b[o];
                    oi[o] += z.max(0.0);
                }
            }
        }
        h = out;
    }
    let mut logits = Matrix::zeros(n, head.fan_out);
    for i in 0..n {
        let hi = h.row(i);
        let li = logits.row_mut(i);
        for o in 0..head.fan_out {
            li[o] = dot(&head.w[o * head.fan_in..(o + 1) * head.fan_in], hi) + head.b[o];
        }
    }
    Ok(logits)
}

/// A path plus the current task head, packaged for the shared training loop.
/// The path's module layers and the head live in a `NetParams` container for
/// the duration of one training call (frozen modules keep their trainable
/// mask off), and are written back afterwards.
struct PathModel<'a> {
    state: &'a mut PathNetState,
    path: PathGenotype,
    task: usize,
    container: NetParams,
    /// container layer index -> (grid layer, module); the final container
    /// layer is the task head.
    slots: Vec<(usize, usize)>,
    opt: OptimizerState,
    checkpoint: Option<NetParams>,
}

impl<'a> PathModel<'a> {
    fn new(
        state: &'a mut PathNetState,
        path: PathGenotype,
        task: usize,
        settings: OptimizerSettings,
    ) -> Result<Self> {
        state.head(task)?;
        let mut layers = Vec::new();
        let mut slots = Vec::new();
        for (l, chosen) in path.layers.iter().enumerate() {
            for &m in chosen {
                let module = &state.modules[l][m];
                let mut layer = module.layer.clone();
                layer.set_trainable(!module.frozen);
                layers.push(layer);
                slots.push((l, m));
            }
        }
        layers.push(state.heads[task - 1].clone());
        let container = NetParams { layers };
        let opt = OptimizerState::new(settings, &container);
        Ok(PathModel {
            state,
            path,
            task,
            container,
            slots,
            opt,
            checkpoint: None,
        })
    }

    fn forward_cached(&self, x: &Matrix) -> (Matrix, Vec<Matrix>, Vec<Vec<Matrix>>) {
        let n = x.rows();
        let units = self.state.topology.units;
        let mut layer_inputs = Vec::new();
        let mut module_posts: Vec<Vec<Matrix>> = Vec::new();
        let mut h = x.clone();
        let mut slot = 0;
        for chosen in &self.path.layers {
            layer_inputs.push(h.clone());
            let mut posts = Vec::with_capacity(chosen.len());
            let mut out = Matrix::zeros(n, units);
            for _ in chosen {
                let module = &self.container.layers[slot];
                slot += 1;
                let mut post = Matrix::zeros(n, units);
                for i in 0..n {
                    let xi = h.row(i);
                    let pi = post.row_mut(i);
                    for o in 0..units {
                        let z = dot(&module.w[o * module.fan_in..(o + 1) * module.fan_in], xi)
                            + module.b[o];
                        pi[o] = z.max(0.0);
                    }
                }
                for i in 0..n {
                    let oi = out.row_mut(i);
                    for (o, v) in post.row(i).iter().enumerate() {
                        oi[o] += v;
                    }
                }
                posts.push(post);
            }
            module_posts.push(posts);
            h = out;
        }
        layer_inputs.push(h.clone());
        let head = self.container.layers.last().unwrap();
        let mut logits = Matrix::zeros(n, head.fan_out);
        for i in 0..n {
            let hi = h.row(i);
            let li = logits.row_mut(i);
            for o in 0..head.fan_out {
                li[o] = dot(&head.w[o * head.fan_in..(o + 1) * head.fan_in], hi) + head.b[o];
            }
        }
        (logits, layer_inputs, module_posts)
    }

    fn backward(
        &self,
        layer_inputs: &[Matrix],
        module_posts: &[Vec<Matrix>],
        dlogits: &Matrix,
    ) -> Grads {
        let n = dlogits.rows();
        let units = self.state.topology.units;
        let mut grads = Grads::zeros_like(&self.container);
        let head = self.container.layers.last().unwrap();
        let head_idx = self.container.layers.len() - 1;
        let last_h = &layer_inputs[self.path.layers.len()];
        // head
        {
            let (dw, db) = &mut grads.layers[head_idx];
            for i in 0..n {
                let hi = last_h.row(i);
                let di = dlogits.row(i);
                for (o, &g) in di.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    axpy(g, hi, &mut dw[o * head.fan_in..(o + 1) * head.fan_in]);
                }
            }
        }
        // dL/d(last layer output)
        let mut dout = Matrix::zeros(n, units);
        for i in 0..n {
            let di = dlogits.row(i);
            let doi = dout.row_mut(i);
            for (o, &g) in di.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                axpy(g, &head.w[o * head.fan_in..(o + 1) * head.fan_in], doi);
            }
        }
        // walk the module layers backwards
        let mut slot_base: Vec<usize> = Vec::with_capacity(self.path.layers.len());
        let mut acc = 0;
        for chosen in &self.path.layers {
            slot_base.push(acc);
            acc += chosen.len();
        }
        for l in (0..self.path.layers.len()).rev() {
            let inp = &layer_inputs[l];
            let fan_in = if l == 0 {
                self.state.input_dim
            } else {
                units
            };
            let mut dinp = Matrix::zeros(n, fan_in);
            for (k, _m) in self.path.layers[l].iter().enumerate() {
                let slot = slot_base[l] + k;
                let module = &self.container.layers[slot];
                let post = &module_posts[l][k];
                let (dw, db) = &mut grads.layers[slot];
                for i in 0..n {
                    let xi = inp.row(i);
                    let doi = dout.row(i);
                    let pi = post.row(i);
                    let dinp_i = dinp.row_mut(i);
                    for o in 0..units {
                        if pi[o] <= 0.0 || doi[o] == 0.0 {
                            continue;
                        }
                        let g = doi[o];
                        db[o] += g;
                        axpy(g, xi, &mut dw[o * fan_in..(o + 1) * fan_in]);
                        axpy(g, &module.w[o * fan_in..(o + 1) * fan_in], dinp_i);
                    }
                }
            }
            dout = dinp;
        }
        grads
    }

    /// Writes the container's weights back into the module grid and head.
    fn write_back(&mut self) {
        for (slot, &(l, m)) in self.slots.iter().enumerate() {
            let module = &mut self.state.modules[l][m];
            if !module.frozen {
                module.layer.w = self.container.layers[slot].w.clone();
                module.layer.b = self.container.layers[slot].b.clone();
                module.trained = true;
            }
        }
        let head_idx = self.container.layers.len() - 1;
        self.state.heads[self.task - 1].w = self.container.layers[head_idx].w.clone();
        self.state.heads[self.task - 1].b = self.container.layers[head_idx].b.clone();
    }
}

impl BatchModel for PathModel<'_> {
    fn train_batch(&mut self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let (logits, layer_inputs, module_posts) = self.forward_cached(x);
        let (loss, dlogits) = softmax_xent_grad(&logits, y)?;
        let grads = self.backward(&layer_inputs, &module_posts, &dlogits);
        step(&mut self.container, &grads, &mut self.opt)?;
        Ok(loss)
    }

    fn metric(&self, x: &Matrix, y: &[usize], monitor: Monitor) -> Result<f64> {
        let (logits, _, _) = self.forward_cached(x);
        match monitor {
            Monitor::ValAccuracy => Ok(accuracy_from_logits(&logits, y)),
            Monitor::ValLoss => Ok(softmax_xent_grad(&logits, y)?.0),
        }
    }

    fn save_checkpoint(&mut self) {
        self.checkpoint = Some(self.container.clone());
    }

    fn load_checkpoint(&mut self) {
        if let Some(snap) = &self.checkpoint {
            self.container = snap.clone();
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathNetSettings {
    pub topology: PathNetTopology,
    pub population: usize,
    pub generations: usize,
    pub epochs_per_eval: usize,
    /// Stop evolution after this many generations without a better champion.
    pub ga_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fine-tune the winning path with early stopping before freezing.
    pub finetune: bool,
    pub finetune_max_epochs: usize,
    pub finetune_patience: usize,
    pub val_fraction: f64,
}

impl Default for PathNetSettings {
    fn default() -> Self {
        PathNetSettings {
            topology: PathNetTopology::default(),
            population: 20,
            generations: 50,
            epochs_per_eval: 1,
            ga_patience: 10,
            batch_size: 16,
            learning_rate: 2e-3,
            finetune: true,
            finetune_max_epochs: 50,
            finetune_patience: 5,
            val_fraction: 0.1,
        }
    }
}

struct Candidate {
    genotype: PathGenotype,
    fitness: Option<f64>,
}

/// Binary-tournament evolution for one session. Returns the best genotype
/// seen; module weights evolve as a side effect of candidate training.
pub fn evolve_session(
    state: &mut PathNetState,
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    task: usize,
    settings: &PathNetSettings,
    seed: u64,
) -> Result<PathGenotype> {
    if settings.population < 2 {
        return Err(Error::Config("population must be >= 2".into()));
    }
    let mut ga_rng = rng::stream(seed, "ga");
    let mut population: Vec<Candidate> = (0..settings.population)
        .map(|_| Candidate {
            genotype: PathGenotype::random(&settings.topology, &mut ga_rng),
            fitness: None,
        })
        .collect();

    let opt_settings = OptimizerSettings::new(OptimKind::Adam, settings.learning_rate);
    let mut best: Option<(f64, usize, PathGenotype)> = None;
    let mut stale = 0usize;

    for generation in 0..settings.generations {
        let a = ga_rng.random_range(0..settings.population);
        let mut b = ga_rng.random_range(0..settings.population - 1);
        if b >= a {
            b += 1;
        }
        for &idx in &[a, b] {
            let genotype = population[idx].genotype.clone();
            let mut model = PathModel::new(state, genotype, task, opt_settings)?;
            let epoch_seed = session_seed(seed, generation * settings.population + idx);
            train_epochs(
                &mut model,
                train_x,
                train_y,
                settings.epochs_per_eval,
                settings.batch_size,
                epoch_seed,
            )?;
            let fitness = model.metric(val_x, val_y, Monitor::ValAccuracy)?;
            model.write_back();
            population[idx].fitness = Some(fitness);
        }
        let fa = population[a].fitness.unwrap();
        let fb = population[b].fitness.unwrap();
        // ties go to the lower population index
        let (winner, loser) = if fb > fa { (b, a) } else if fa > fb { (a, b) } else if a < b { (a, b) } else { (b, a) };
        let mutated = population[winner]
            .genotype
            .mutate(&settings.topology, &mut ga_rng);
        population[loser] = Candidate {
            genotype: mutated,
            fitness: None,
        };
        let (champ_fit, champ_idx) = (population[winner].fitness.unwrap(), winner);
        let improved = match &best {
            None => true,
            Some((f, _, _)) => champ_fit > *f,
        };
        if improved {
            best = Some((champ_fit, champ_idx, population[winner].genotype.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= settings.ga_patience {
                break;
            }
        }
    }
    Ok(best
        .map(|(_, _, g)| g)
        .unwrap_or_else(|| population[0].genotype.clone()))
}

fn train_epochs(
    model: &mut PathModel<'_>,
    x: &Matrix,
    y: &[usize],
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut r = rng::stream(seed, "path-epochs");
    for _ in 0..epochs {
        rng::shuffle(&mut order, &mut r);
        for chunk in order.chunks(batch_size) {
            let bx = x.select_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            model.train_batch(&bx, &by)?;
        }
    }
    Ok(())
}

/// Freezes every module on the path and stores the task's head read-only.
pub fn freeze_winner(state: &mut PathNetState, genotype: &PathGenotype, task: usize) {
    for (l, chosen) in genotype.layers.iter().enumerate() {
        for &m in chosen {
            let module = &mut state.modules[l][m];
            module.frozen = true;
            module.trained = true;
            module.layer.set_trainable(false);
        }
    }
    state.heads[task - 1].set_trainable(false);
    state.winning_paths.push(genotype.clone());
}

/// Forward on a stored task's winning path and head, argmax restricted to
/// the classes that task presented.
pub fn predict_for_task(state: &PathNetState, task: usize, x: &Matrix) -> Result<Vec<usize>> {
    if task == 0 || task > state.winning_paths.len() {
        return Err(Error::State(format!(
            "task {task} has not been learned (have {})",
            state.winning_paths.len()
        )));
    }
    let logits = forward_on_path(state, &state.winning_paths[task - 1].layers, task, x)?;
    Ok(predict_restricted(&logits, &state.task_classes[task - 1]))
}

/// The PathNet learner. Prediction requires the task id.
pub struct PathNetLearner {
    settings: PathNetSettings,
    seed: u64,
    state: PathNetState,
    tracker: SessionTracker,
}

impl PathNetLearner {
    pub fn new(
        input_dim: usize,
        n_classes: usize,
        settings: PathNetSettings,
        seed: u64,
    ) -> Result<Self> {
        let state = PathNetState::new(input_dim, n_classes, settings.topology, seed)?;
        Ok(PathNetLearner {
            settings,
            seed,
            state,
            tracker: SessionTracker::default(),
        })
    }

    pub fn state(&self) -> &PathNetState {
        &self.state
    }
}

impl Learner for PathNetLearner {
    fn model_id(&self) -> &'static str {
        "pathnet"
    }

    fn train_session(&mut self, session: &StudySession) -> Result<()> {
        self.tracker.expect(session)?;
        let task = session.id;
        let s = session_seed(self.seed, task);
        let mut head_rng = rng::stream(s, "head-init");
        self.state.heads.push(DenseLayer::he_uniform(
            self.settings.topology.units,
            self.state.n_classes,
            &mut head_rng,
        ));
        // modules that never trained get a fresh draw for this session
        let mut reinit_rng = rng::stream(s, "module-reinit");
        for l in 0..self.state.topology.layers {
            let fan_in = if l == 0 {
                self.state.input_dim
            } else {
                self.state.topology.units
            };
            for m in 0..self.state.topology.modules {
                let module = &mut self.state.modules[l][m];
                if !module.trained && !module.frozen {
                    module.layer = DenseLayer::he_uniform(
                        fan_in,
                        self.state.topology.units,
                        &mut reinit_rng,
                    );
                }
            }
        }

        let (x, y) = session.train();
        let (tx, ty, vx, vy) = val_split(&x, &y, self.settings.val_fraction, s);
        let winner = evolve_session(
            &mut self.state,
            &tx,
            &ty,
            &vx,
            &vy,
            task,
            &self.settings,
            s,
        )?;
        if self.settings.finetune {
            let opt = OptimizerSettings::new(OptimKind::Adam, self.settings.learning_rate);
            let mut model = PathModel::new(&mut self.state, winner.clone(), task, opt)?;
            let cfg = TrainConfig {
                batch_size: self.settings.batch_size,
                max_epochs: self.settings.finetune_max_epochs,
                patience: self.settings.finetune_patience,
                monitor: Monitor::ValAccuracy,
                seed: s,
            };
            train_model(&mut model, &tx, &ty, &vx, &vy, &cfg)?;
            model.write_back();
        }
        self.state.task_classes.push(session.classes());
        freeze_winner(&mut self.state, &winner, task);
        self.tracker.complete(session);
        Ok(())
    }

    fn predict(&self, _x: &Matrix) -> Result<Vec<usize>> {
        Err(Error::State(
            "pathnet predictions require a task id; use predict_for_task".into(),
        ))
    }

    fn predict_for_task(&self, task: usize, x: &Matrix) -> Result<Vec<usize>> {
        if self.tracker.completed() == 0 {
            return Err(Error::State("predict before any training".into()));
        }
        predict_for_task(&self.state, task, x)
    }

    fn requires_task_id(&self) -> bool {
        true
    }

    fn sessions_trained(&self) -> usize {
        self.tracker.completed()
    }

    fn seen_classes(&self) -> Vec<usize> {
        self.tracker.seen_classes()
    }

    fn memory(&self) -> MemoryLedger {
        let head_bytes: usize = self.state.heads.iter().map(|h| 8 * h.n_params()).sum();
        MemoryLedger {
            model_bytes: 8 * self.state.module_params() as u64,
            aux_bytes: head_bytes as u64,
        }
    }
}
