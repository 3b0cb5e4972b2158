//! Browser demo bindings: desk-scale forgetting experiments on synthetic
//! clusters, an animatable Kohonen lattice, and a feature-redundancy
//! heatmap. Everything is seeded and stateless apart from the SOM handle,
//! so the page can re-run any panel reproducibly.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use forgetbench::data::{
    make_class_incremental_stream, make_multimodal_stream, make_permutation_stream,
    synth_blobs_pair, ClassOrder, StudySession,
};
use forgetbench::fcbf;
use forgetbench::geppnet::SomLattice;
use forgetbench::harness::{
    compute_alpha_ideal, run_sessions, ExperimentConfig, ModelId, ModelOverrides, Protocol,
};
use forgetbench::linalg::Matrix;
use forgetbench::rng;

fn demo_overrides() -> ModelOverrides {
    ModelOverrides {
        hidden: Some(vec![32]),
        max_epochs: Some(25),
        patience: Some(8),
        batch_size: Some(16),
        learning_rate: Some(5e-3),
        optimizer: Some(forgetbench::nncore::OptimKind::Adam),
        ewc_lambda: Some(2000.0),
        fisher_samples: Some(128),
        pathnet_layers: Some(2),
        pathnet_modules: Some(6),
        pathnet_active: Some(3),
        pathnet_units: Some(16),
        pathnet_population: Some(6),
        pathnet_generations: Some(8),
        som_rows: Some(8),
        som_cols: Some(8),
        base_iters: Some(1600),
        incremental_iters: Some(700),
        readout_lr: Some(0.05),
        fel_units: Some(64),
        fel_fan_in: Some(8),
        fel_winners: Some(4),
        ..ModelOverrides::default()
    }
}

fn demo_stream(protocol: Protocol, t_sessions: usize, spread: f64, seed: u64) -> Result<Vec<StudySession>, String> {
    let (train, test) = synth_blobs_pair(5, 40, 15, 16, spread, seed);
    match protocol {
        Protocol::Permutation => {
            make_permutation_stream(train, test, t_sessions.max(2), seed).map_err(|e| e.to_string())
        }
        Protocol::IncrementalClass => {
            make_class_incremental_stream(train, test, 0.4, ClassOrder::Ascending)
                .map_err(|e| e.to_string())
        }
        Protocol::Multimodal => {
            let (train2, test2) = synth_blobs_pair(4, 40, 15, 10, spread, seed ^ 0x5eed);
            make_multimodal_stream(train, test, train2, test2).map_err(|e| e.to_string())
        }
    }
}

#[derive(Serialize)]
struct DemoResult {
    model: String,
    protocol: String,
    t_sessions: usize,
    alpha_ideal: f64,
    sessions: Vec<usize>,
    alpha_base: Vec<f64>,
    alpha_new: Vec<f64>,
    alpha_all: Vec<f64>,
    omega_base: f64,
    omega_new: f64,
    omega_all: f64,
    model_size_mb: f64,
    aux_memory_mb: f64,
}

/// Runs one model through a synthetic session stream and returns the
/// accuracy curves plus omega metrics as JSON.
#[wasm_bindgen]
pub fn run_forgetting_demo(
    model: &str,
    protocol: &str,
    t_sessions: usize,
    spread: f64,
    seed: u64,
) -> Result<String, JsValue> {
    forgetting_demo_json(model, protocol, t_sessions, spread, seed)
        .map_err(|e| JsValue::from_str(&e))
}

/// Plain-Rust core of [`run_forgetting_demo`]; errors as strings.
pub fn forgetting_demo_json(
    model: &str,
    protocol: &str,
    t_sessions: usize,
    spread: f64,
    seed: u64,
) -> Result<String, String> {
    let model: ModelId = model.parse().map_err(|e: forgetbench::Error| e.to_string())?;
    let protocol: Protocol = protocol
        .parse()
        .map_err(|e: forgetbench::Error| e.to_string())?;
    let sessions = demo_stream(protocol, t_sessions, spread, seed)?;
    let config = ExperimentConfig {
        protocol,
        model,
        dataset: "demo-blobs".into(),
        dataset2: None,
        sessions: Some(sessions.len()),
        base_fraction: 0.4,
        seed,
        alpha_ideal: None,
        out_dir: String::new(),
        overrides: demo_overrides(),
    };
    config.validate().map_err(|e| e.to_string())?;
    let alpha_ideal =
        compute_alpha_ideal(&sessions, &config.overrides, seed).map_err(|e| e.to_string())?;
    let record = run_sessions(&config, &sessions, "demo-blobs", alpha_ideal)
        .map_err(|e| e.to_string())?;
    let result = DemoResult {
        model: record.model.as_str().into(),
        protocol: record.protocol.as_str().into(),
        t_sessions: record.t_sessions,
        alpha_ideal: record.alpha_ideal,
        sessions: record.sessions.iter().map(|s| s.session).collect(),
        alpha_base: record.sessions.iter().map(|s| s.alpha_base).collect(),
        alpha_new: record.sessions.iter().map(|s| s.alpha_new).collect(),
        alpha_all: record.sessions.iter().map(|s| s.alpha_all).collect(),
        omega_base: record.omega_base,
        omega_new: record.omega_new,
        omega_all: record.omega_all,
        model_size_mb: record.model_size_mb,
        aux_memory_mb: record.aux_memory_mb,
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

/// An animatable 2-D Kohonen lattice training on a ring of noisy points.
#[wasm_bindgen]
pub struct SomDemo {
    som: SomLattice,
    data: Matrix,
    order: Vec<usize>,
    cursor: usize,
    shuffle_rng: rand_chacha::ChaCha8Rng,
}

#[wasm_bindgen]
impl SomDemo {
    /// `rows x cols` lattice over `n_points` ring samples.
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, n_points: usize, seed: u64) -> SomDemo {
        use rand::Rng;
        let mut r = rng::stream(seed, "som-demo-data");
        let mut data = Matrix::zeros(n_points.max(8), 2);
        for i in 0..data.rows() {
            let angle = r.random::<f64>() * std::f64::consts::TAU;
            let radius = 0.35 + 0.08 * r.random::<f64>();
            data.set(i, 0, 0.5 + radius * angle.cos());
            data.set(i, 1, 0.5 + radius * angle.sin());
        }
        let total = rows * cols * 60;
        let som = SomLattice::new(rows.max(2), cols.max(2), 2, 0.25, total as f64 / 3.0, seed);
        let order: Vec<usize> = (0..data.rows()).collect();
        SomDemo {
            som,
            data,
            order,
            cursor: usize::MAX,
            shuffle_rng: rng::stream(seed, "som-demo-order"),
        }
    }

    /// Runs `n` single-example updates.
    pub fn step(&mut self, n: usize) {
        for _ in 0..n {
            if self.cursor >= self.order.len() {
                rng::shuffle(&mut self.order, &mut self.shuffle_rng);
                self.cursor = 0;
            }
            let row = self.order[self.cursor];
            self.cursor += 1;
            let x = self.data.row(row).to_vec();
            let _ = self.som.update(&x);
        }
    }

    pub fn iteration(&self) -> usize {
        self.som.iteration
    }

    pub fn rows(&self) -> usize {
        self.som.rows
    }

    pub fn cols(&self) -> usize {
        self.som.cols
    }

    /// Unit weight vectors, flattened `[x0, y0, x1, y1, ...]` row-major.
    pub fn unit_positions(&self) -> Vec<f64> {
        self.som.weights.data().to_vec()
    }

    /// The training points, flattened the same way.
    pub fn data_points(&self) -> Vec<f64> {
        self.data.data().to_vec()
    }
}

#[derive(Serialize)]
struct HeatmapResult {
    n_features: usize,
    values: Vec<f64>,
    kept_features: usize,
    kept_percentage: f64,
}

/// Synthetic feature set with a redundancy dial (0 = independent features,
/// 1 = heavily duplicated); returns the pairwise SU matrix and the
/// redundancy filter's kept count as JSON.
#[wasm_bindgen]
pub fn su_heatmap_demo(n_features: usize, redundancy: f64, seed: u64) -> Result<String, JsValue> {
    su_heatmap_json(n_features, redundancy, seed).map_err(|e| JsValue::from_str(&e))
}

/// Plain-Rust core of [`su_heatmap_demo`]; errors as strings.
pub fn su_heatmap_json(n_features: usize, redundancy: f64, seed: u64) -> Result<String, String> {
    use rand::Rng;
    let f = n_features.clamp(4, 64);
    let n = 600;
    let redundancy = redundancy.clamp(0.0, 1.0);
    let mut r = rng::stream(seed, "heatmap");
    let mut labels = Vec::with_capacity(n);
    let mut data = vec![0.0; n * f];
    // a handful of latent signals; higher redundancy reuses them across
    // more columns
    let latents = 4.max((f as f64 * (1.0 - redundancy)) as usize);
    for i in 0..n {
        let class = (r.random::<f64>() * 4.0) as usize;
        labels.push(class);
        let mut latent = vec![0.0; latents];
        for (k, v) in latent.iter_mut().enumerate() {
            *v = (class as f64) * 0.8 + ((k * 7 + 3) as f64) * 0.1 + 2.0 * r.random::<f64>();
        }
        for j in 0..f {
            let src = j % latents;
            let noise = (1.0 - redundancy) * 1.5 + 0.05;
            data[i * f + j] = latent[src] + noise * r.random::<f64>();
        }
    }
    let m = Matrix::from_vec(n, f, data).map_err(|e| e.to_string())?;
    let su = fcbf::su_matrix(&m, 10).map_err(|e| e.to_string())?;
    let sel = fcbf::fcbf_select(&m, &labels, 0.0, 10).map_err(|e| e.to_string())?;
    let result = HeatmapResult {
        n_features: f,
        values: su.values,
        kept_features: sel.kept.len(),
        kept_percentage: 100.0 * sel.kept_fraction(),
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}
