//! Dataset ingestion and construction of the incremental-session streams.
//!
//! Datasets arrive either as IDX image/label pairs (the MNIST binary layout)
//! or as plain feature CSVs (`label,f0,...,f{d-1}`) for pre-extracted
//! embeddings. Streams are lists of [`StudySession`] handles that materialize
//! their (transformed) train/test matrices on demand, so a long permutation
//! stream does not hold T copies of the dataset in memory.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Environment variable naming the dataset root directory. CLI flags take
/// precedence; relative paths that do not exist locally are resolved against
/// this root.
pub const DATA_ROOT_ENV: &str = "FORGETBENCH_DATA";

pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

/// A labeled feature set: one split (train or test) of one dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    class_index: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "Dataset",
                format!("{} labels", features.rows()),
                format!("{} labels", labels.len()),
            ));
        }
        let mut class_index = vec![Vec::new(); n_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= n_classes {
                return Err(Error::Data(format!(
                    "label {y} at row {i} out of range for {n_classes} classes"
                )));
            }
            class_index[y].push(i);
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            n_classes,
            class_index,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row indices of one class.
    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }
}

fn read_u32_be(r: &mut impl Read, path: &Path, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format {
        path: path.display().to_string(),
        offset: *offset,
        message: "truncated while reading a big-endian u32 header field".into(),
    })?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an IDX image/label file pair into a `Dataset`.
///
/// Image files must begin with magic `0x00000803`, label files with
/// `0x00000801`, both followed by big-endian dimensions. Pixels are scaled
/// to `[0, 1]` and images flattened to `rows * cols` features.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images_path = resolve_data_path(images_path);
    let labels_path = resolve_data_path(labels_path);

    let mut f = File::open(&images_path)?;
    let mut offset = 0u64;
    let magic = read_u32_be(&mut f, &images_path, &mut offset)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format {
            path: images_path.display().to_string(),
            offset: 0,
            message: format!("bad image magic 0x{magic:08x}, expected 0x00000803"),
        });
    }
    let n = read_u32_be(&mut f, &images_path, &mut offset)? as usize;
    let rows = read_u32_be(&mut f, &images_path, &mut offset)? as usize;
    let cols = read_u32_be(&mut f, &images_path, &mut offset)? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; n * d];
    f.read_exact(&mut pixels).map_err(|_| Error::Format {
        path: images_path.display().to_string(),
        offset,
        message: format!("truncated pixel data, expected {} bytes", n * d),
    })?;

    let mut lf = File::open(&labels_path)?;
    let mut loff = 0u64;
    let lmagic = read_u32_be(&mut lf, &labels_path, &mut loff)?;
    if lmagic != 0x0000_0801 {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            offset: 0,
            message: format!("bad label magic 0x{lmagic:08x}, expected 0x00000801"),
        });
    }
    let ln = read_u32_be(&mut lf, &labels_path, &mut loff)? as usize;
    if ln != n {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            offset: 4,
            message: format!("label count {ln} does not match image count {n}"),
        });
    }
    let mut raw_labels = vec![0u8; n];
    lf.read_exact(&mut raw_labels).map_err(|_| Error::Format {
        path: labels_path.display().to_string(),
        offset: loff,
        message: format!("truncated label data, expected {n} bytes"),
    })?;

    let features = Matrix::from_vec(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, features, labels, n_classes)
}

/// Loads the conventional IDX directory layout:
/// `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` plus the
/// `t10k-*` test pair. When the train split has exactly 60,000 rows (the
/// canonical MNIST file) the trailing 10,000 are reserved as a held-out
/// split, leaving 50,000 training rows.
pub fn load_idx_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve_data_path(dir);
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    let mut train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let mut test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    if train.n() == 60_000 {
        let keep: Vec<usize> = (0..50_000).collect();
        let features = train.features.select_rows(&keep);
        let labels = train.labels[..50_000].to_vec();
        let c = train.n_classes;
        train = Dataset::new(train.name, features, labels, c)?;
    }
    train.name = name.clone();
    test.name = name;
    Ok((train, test))
}

/// Loads a feature CSV with rows `label,f0,...,f{d-1}`. The class count is
/// inferred as `max label + 1`.
pub fn load_csv_features(path: &Path) -> Result<Dataset> {
    let path = resolve_data_path(path);
    let text = std::fs::read_to_string(&path)?;
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut d: Option<usize> = None;
    let mut n = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let label_cell = cells.next().unwrap_or("");
        let label: usize = label_cell.trim().parse().map_err(|_| Error::Format {
            path: path.display().to_string(),
            offset: lineno as u64 + 1,
            message: format!("line {}: non-integer label {label_cell:?}", lineno + 1),
        })?;
        let mut row = Vec::new();
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                offset: lineno as u64 + 1,
                message: format!("line {}: non-numeric cell {cell:?}", lineno + 1),
            })?;
            row.push(v);
        }
        match d {
            None => d = Some(row.len()),
            Some(expected) if expected != row.len() => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    offset: lineno as u64 + 1,
                    message: format!(
                        "line {}: ragged row with {} values, expected {}",
                        lineno + 1,
                        row.len(),
                        expected
                    ),
                });
            }
            _ => {}
        }
        features.extend_from_slice(&row);
        labels.push(label);
        n += 1;
    }
    let d = d.ok_or_else(|| Error::Format {
        path: path.display().to_string(),
        offset: 0,
        message: "empty csv".into(),
    })?;
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(name, Matrix::from_vec(n, d, features)?, labels, n_classes)
}

/// Loads a dataset directory as a (train, test) pair. IDX layout is used if
/// `train-images-idx3-ubyte` is present; otherwise `train.csv`/`test.csv`.
pub fn load_dataset_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let resolved = resolve_data_path(dir);
    if resolved.join("train-images-idx3-ubyte").exists() {
        return load_idx_dir(&resolved);
    }
    if resolved.join("train.csv").exists() {
        let mut train = load_csv_features(&resolved.join("train.csv"))?;
        let mut test = load_csv_features(&resolved.join("test.csv"))?;
        let c = train.n_classes.max(test.n_classes);
        train = Dataset::new(train.name, train.features, train.labels, c)?;
        test = Dataset::new(test.name, test.features, test.labels, c)?;
        let name = resolved
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into());
        train.name = name.clone();
        test.name = name;
        return Ok((train, test));
    }
    Err(Error::Data(format!(
        "no recognizable dataset in {} (expected IDX files or train.csv/test.csv)",
        resolved.display()
    )))
}

/// What one study session presents relative to its base dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionDescriptor {
    Permutation { perm_id: usize },
    ClassSet { classes: Vec<usize> },
    Modality { dataset: String },
}

#[derive(Debug, Clone)]
enum Transform {
    Identity,
    /// out[j] = in[perm[j]]
    Permute(Arc<Vec<usize>>),
    /// zero-pad on the right to this width
    ZeroPad { width: usize },
}

#[derive(Debug)]
struct SourceData {
    train_x: Matrix,
    train_y: Vec<usize>,
    test_x: Matrix,
    test_y: Vec<usize>,
}

/// One labeled batch of the incremental stream, with its paired test set
/// under the same transformation. Data materializes on access.
#[derive(Debug, Clone)]
pub struct StudySession {
    pub id: usize,
    pub descriptor: SessionDescriptor,
    source: Arc<SourceData>,
    train_rows: Option<Arc<Vec<usize>>>,
    test_rows: Option<Arc<Vec<usize>>>,
    transform: Transform,
    label_offset: usize,
}

impl StudySession {
    fn materialize(&self, x: &Matrix, rows: Option<&Arc<Vec<usize>>>) -> Matrix {
        let base = match rows {
            Some(idx) => x.select_rows(idx),
            None => x.clone(),
        };
        match &self.transform {
            Transform::Identity => base,
            Transform::Permute(perm) => {
                let mut out = Matrix::zeros(base.rows(), base.cols());
                for i in 0..base.rows() {
                    let src = base.row(i);
                    let dst = out.row_mut(i);
                    for (j, &p) in perm.iter().enumerate() {
                        dst[j] = src[p];
                    }
                }
                out
            }
            Transform::ZeroPad { width } => {
                let mut out = Matrix::zeros(base.rows(), *width);
                for i in 0..base.rows() {
                    out.row_mut(i)[..base.cols()].copy_from_slice(base.row(i));
                }
                out
            }
        }
    }

    fn labels(&self, y: &[usize], rows: Option<&Arc<Vec<usize>>>) -> Vec<usize> {
        match rows {
            Some(idx) => idx.iter().map(|&i| y[i] + self.label_offset).collect(),
            None => y.iter().map(|&l| l + self.label_offset).collect(),
        }
    }

    pub fn train(&self) -> (Matrix, Vec<usize>) {
        (
            self.materialize(&self.source.train_x, self.train_rows.as_ref()),
            self.labels(&self.source.train_y, self.train_rows.as_ref()),
        )
    }

    pub fn test(&self) -> (Matrix, Vec<usize>) {
        (
            self.materialize(&self.source.test_x, self.test_rows.as_ref()),
            self.labels(&self.source.test_y, self.test_rows.as_ref()),
        )
    }

    /// Feature dimensionality after the session's transform.
    pub fn dim(&self) -> usize {
        match &self.transform {
            Transform::ZeroPad { width } => *width,
            _ => self.source.train_x.cols(),
        }
    }

    pub fn n_train(&self) -> usize {
        match &self.train_rows {
            Some(idx) => idx.len(),
            None => self.source.train_x.rows(),
        }
    }

    /// Sorted class ids present in the session's training data.
    pub fn classes(&self) -> Vec<usize> {
        let mut seen = std::collections::BTreeSet::new();
        match &self.train_rows {
            Some(idx) => {
                for &i in idx.iter() {
                    seen.insert(self.source.train_y[i] + self.label_offset);
                }
            }
            None => {
                for &y in &self.source.train_y {
                    seen.insert(y + self.label_offset);
                }
            }
        }
        seen.into_iter().collect()
    }
}

/// Total distinct classes across a stream (max class id + 1).
pub fn stream_class_count(sessions: &[StudySession]) -> usize {
    sessions
        .iter()
        .flat_map(|s| s.classes())
        .max()
        .map_or(0, |m| m + 1)
}

fn check_split_pair(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.dim() != test.dim() {
        return Err(Error::Data(format!(
            "train dim {} != test dim {}",
            train.dim(),
            test.dim()
        )));
    }
    if train.n_classes != test.n_classes {
        return Err(Error::Data(format!(
            "train classes {} != test classes {}",
            train.n_classes, test.n_classes
        )));
    }
    Ok(())
}

/// Builds the feature-permutation stream: session 1 is the identity, each
/// later session applies one fixed random permutation (held constant within
/// the session) to every train and test feature vector. Every session
/// contains the full dataset.
pub fn make_permutation_stream(
    train: Dataset,
    test: Dataset,
    t_sessions: usize,
    seed: u64,
) -> Result<Vec<StudySession>> {
    if t_sessions < 2 {
        return Err(Error::Config(format!(
            "permutation stream needs T >= 2, got {t_sessions}"
        )));
    }
    check_split_pair(&train, &test)?;
    let d = train.dim();
    let source = Arc::new(SourceData {
        train_x: train.features,
        train_y: train.labels,
        test_x: test.features,
        test_y: test.labels,
    });
    let mut perm_rng = rng::stream(seed, "perm");
    let mut sessions = Vec::with_capacity(t_sessions);
    for t in 1..=t_sessions {
        let transform = if t == 1 {
            Transform::Identity
        } else {
            let mut perm: Vec<usize> = (0..d).collect();
            rng::shuffle(&mut perm, &mut perm_rng);
            Transform::Permute(Arc::new(perm))
        };
        sessions.push(StudySession {
            id: t,
            descriptor: SessionDescriptor::Permutation { perm_id: t - 1 },
            source: Arc::clone(&source),
            train_rows: None,
            test_rows: None,
            transform,
            label_offset: 0,
        });
    }
    Ok(sessions)
}

/// Class presentation order for the incremental-class stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassOrder {
    Ascending,
    Shuffled { seed: u64 },
}

/// Builds the incremental-class stream: session 1 holds all training data of
/// the first `ceil(C * base_fraction)` classes, then one session per
/// remaining class. `T = C - base + 1`.
pub fn make_class_incremental_stream(
    train: Dataset,
    test: Dataset,
    base_fraction: f64,
    order: ClassOrder,
) -> Result<Vec<StudySession>> {
    check_split_pair(&train, &test)?;
    let c = train.n_classes;
    if c < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let base = (c as f64 * base_fraction).ceil() as usize;
    if base < 1 || base >= c {
        return Err(Error::Config(format!(
            "base_fraction {base_fraction} yields {base} base classes out of {c}"
        )));
    }
    for class in 0..c {
        if train.class_rows(class).is_empty() {
            return Err(Error::Data(format!("class {class} has no training data")));
        }
        if test.class_rows(class).is_empty() {
            return Err(Error::Data(format!("class {class} has no test data")));
        }
    }
    let mut class_order: Vec<usize> = (0..c).collect();
    if let ClassOrder::Shuffled { seed } = order {
        let mut r = rng::stream(seed, "class-order");
        rng::shuffle(&mut class_order, &mut r);
    }

    let rows_for = |ds: &Dataset, classes: &[usize]| -> Vec<usize> {
        let mut rows: Vec<usize> = classes
            .iter()
            .flat_map(|&cl| ds.class_rows(cl).iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    };

    let base_classes: Vec<usize> = class_order[..base].to_vec();
    let base_train_rows = rows_for(&train, &base_classes);
    let base_test_rows = rows_for(&test, &base_classes);

    let source = Arc::new(SourceData {
        train_x: train.features,
        train_y: train.labels,
        test_x: test.features,
        test_y: test.labels,
    });

    let mut sessions = Vec::with_capacity(c - base + 1);
    sessions.push(StudySession {
        id: 1,
        descriptor: SessionDescriptor::ClassSet {
            classes: {
                let mut sorted = base_classes.clone();
                sorted.sort_unstable();
                sorted
            },
        },
        source: Arc::clone(&source),
        train_rows: Some(Arc::new(base_train_rows)),
        test_rows: Some(Arc::new(base_test_rows)),
        transform: Transform::Identity,
        label_offset: 0,
    });
    for (k, &class) in class_order[base..].iter().enumerate() {
        let train_rows = source_rows(&source.train_y, class);
        let test_rows = source_rows(&source.test_y, class);
        sessions.push(StudySession {
            id: k + 2,
            descriptor: SessionDescriptor::ClassSet {
                classes: vec![class],
            },
            source: Arc::clone(&source),
            train_rows: Some(Arc::new(train_rows)),
            test_rows: Some(Arc::new(test_rows)),
            transform: Transform::Identity,
            label_offset: 0,
        });
    }
    Ok(sessions)
}

fn source_rows(labels: &[usize], class: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == class)
        .map(|(i, _)| i)
        .collect()
}

/// Builds the two-session multi-modal stream. The lower-dimensional dataset
/// is zero-padded on the right to the wider one's dimensionality, and the
/// second dataset's labels are offset by the first's class count so one
/// output layer spans both.
pub fn make_multimodal_stream(
    first_train: Dataset,
    first_test: Dataset,
    second_train: Dataset,
    second_test: Dataset,
) -> Result<Vec<StudySession>> {
    check_split_pair(&first_train, &first_test)?;
    check_split_pair(&second_train, &second_test)?;
    let width = first_train.dim().max(second_train.dim());
    let offset = first_train.n_classes;
    let transform_for = |d: usize| {
        if d < width {
            Transform::ZeroPad { width }
        } else {
            Transform::Identity
        }
    };
    let t1 = transform_for(first_train.dim());
    let t2 = transform_for(second_train.dim());
    let name1 = first_train.name.clone();
    let name2 = second_train.name.clone();
    let source1 = Arc::new(SourceData {
        train_x: first_train.features,
        train_y: first_train.labels,
        test_x: first_test.features,
        test_y: first_test.labels,
    });
    let source2 = Arc::new(SourceData {
        train_x: second_train.features,
        train_y: second_train.labels,
        test_x: second_test.features,
        test_y: second_test.labels,
    });
    Ok(vec![
        StudySession {
            id: 1,
            descriptor: SessionDescriptor::Modality { dataset: name1 },
            source: source1,
            train_rows: None,
            test_rows: None,
            transform: t1,
            label_offset: 0,
        },
        StudySession {
            id: 2,
            descriptor: SessionDescriptor::Modality { dataset: name2 },
            source: source2,
            train_rows: None,
            test_rows: None,
            transform: t2,
            label_offset: offset,
        },
    ])
}

/// Seeded Gaussian clusters: class means are standard-normal draws, samples
/// add `spread`-scaled noise. Deterministic for a fixed seed.
pub fn synth_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Dataset {
    synth_blobs_labeled(n_classes, per_class, dim, spread, seed, "blob-samples")
}

/// Train/test pair over the same seeded class means.
pub fn synth_blobs_pair(
    n_classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> (Dataset, Dataset) {
    (
        synth_blobs_labeled(n_classes, per_class_train, dim, spread, seed, "blob-samples"),
        synth_blobs_labeled(n_classes, per_class_test, dim, spread, seed, "blob-test"),
    )
}

fn synth_blobs_labeled(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    sample_stream: &str,
) -> Dataset {
    assert!(n_classes > 0 && per_class > 0 && dim > 0);
    let mut mean_rng = rng::stream(seed, "blob-means");
    let mut g = rng::Gaussian::new();
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| g.sample(&mut mean_rng)).collect())
        .collect();
    let mut sample_rng = rng::stream(seed, sample_stream);
    let mut gs = rng::Gaussian::new();
    let mut features = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean.iter() {
                features.push(m + spread * gs.sample(&mut sample_rng));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        format!("blobs-c{n_classes}-d{dim}"),
        Matrix::from_vec(n_classes * per_class, dim, features).unwrap(),
        labels,
        n_classes,
    )
    .unwrap()
}

/// Seeded stratified split of one dataset into (train, test) parts.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction {test_fraction} out of range"
        )));
    }
    let mut r = rng::stream(seed, "split");
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for class in 0..ds.n_classes {
        let mut rows = ds.class_rows(class).to_vec();
        rng::shuffle(&mut rows, &mut r);
        let n_test = ((rows.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(rows.len().saturating_sub(1));
        test_rows.extend_from_slice(&rows[..n_test]);
        train_rows.extend_from_slice(&rows[n_test..]);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    let make = |rows: &[usize]| -> Result<Dataset> {
        Dataset::new(
            ds.name.clone(),
            ds.features.select_rows(rows),
            rows.iter().map(|&i| ds.labels[i]).collect(),
            ds.n_classes,
        )
    };
    Ok((make(&train_rows)?, make(&test_rows)?))
}
