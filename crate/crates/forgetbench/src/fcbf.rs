//! Feature-redundancy analysis: symmetric uncertainty and the fast
//! correlation-based filter.
//!
//! Continuous features are discretized into equal-width bins over their own
//! [min, max] range. Symmetric uncertainty normalizes information gain:
//!
//!   SU(X, Y) = 2 * (H(X) - H(X|Y)) / (H(X) + H(Y))
//!
//! with entropies in bits. The filter ranks features by SU against the class,
//! then walks the ranking and removes any feature that is more redundant with
//! an already-kept feature than it is relevant to the class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Equal-width discretization of one feature; constant features land in bin 0.
fn bin_values(values: &[f64], bins: usize) -> Vec<usize> {
    assert!(bins >= 1);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let scale = bins as f64 / (hi - lo);
    values
        .iter()
        .map(|&v| (((v - lo) * scale) as usize).min(bins - 1))
        .collect()
}

fn entropy_of_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

fn entropy_discrete(codes: &[usize], levels: usize) -> f64 {
    let mut counts = vec![0usize; levels];
    for &c in codes {
        counts[c] += 1;
    }
    entropy_of_counts(&counts, codes.len())
}

/// Shannon entropy in bits of the equal-width-binned values.
/// A constant feature has zero entropy.
pub fn entropy(values: &[f64], bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("entropy of empty values".into()));
    }
    Ok(entropy_discrete(&bin_values(values, bins), bins))
}

fn su_codes(x: &[usize], lx: usize, y: &[usize], ly: usize) -> f64 {
    let n = x.len();
    let hx = entropy_discrete(x, lx);
    let hy = entropy_discrete(y, ly);
    if hx + hy == 0.0 {
        return 0.0;
    }
    // H(X|Y) from the joint histogram
    let mut joint = vec![0usize; lx * ly];
    let mut y_counts = vec![0usize; ly];
    for (&xi, &yi) in x.iter().zip(y) {
        joint[yi * lx + xi] += 1;
        y_counts[yi] += 1;
    }
    let mut h_x_given_y = 0.0;
    for yi in 0..ly {
        let ny = y_counts[yi];
        if ny == 0 {
            continue;
        }
        let slice = &joint[yi * lx..(yi + 1) * lx];
        h_x_given_y += (ny as f64 / n as f64) * entropy_of_counts(slice, ny);
    }
    let ig = hx - h_x_given_y;
    2.0 * ig / (hx + hy)
}

/// Symmetric uncertainty of two continuous variables, both discretized into
/// `bins` equal-width bins. Returns 0 when both are constant.
pub fn symmetric_uncertainty(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Input("symmetric_uncertainty of empty values".into()));
    }
    Ok(su_codes(
        &bin_values(x, bins),
        bins,
        &bin_values(y, bins),
        bins,
    ))
}

/// The full F x F symmetric-uncertainty matrix plus the binning used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuMatrix {
    pub n_features: usize,
    pub bins: usize,
    /// Row-major F x F, symmetric, diagonal 1 for non-constant features.
    pub values: Vec<f64>,
}

impl SuMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_features + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_features {
            let row: Vec<String> = (0..self.n_features)
                .map(|j| format!("{:.6}", self.get(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Computes the pairwise SU matrix over the columns of `features`.
pub fn su_matrix(features: &Matrix, bins: usize) -> Result<SuMatrix> {
    let f = features.cols();
    if features.rows() == 0 {
        return Err(Error::Input("su_matrix of empty data".into()));
    }
    let binned: Vec<Vec<usize>> = (0..f)
        .map(|j| bin_values(&features.column(j), bins))
        .collect();
    let mut values = vec![0.0; f * f];
    for i in 0..f {
        for j in i..f {
            let v = if i == j {
                su_codes(&binned[i], bins, &binned[i], bins)
            } else {
                su_codes(&binned[i], bins, &binned[j], bins)
            };
            values[i * f + j] = v;
            values[j * f + i] = v;
        }
    }
    Ok(SuMatrix {
        n_features: f,
        bins,
        values,
    })
}

/// Result of the filter: kept features in class-relevance order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcbfSelection {
    /// Kept feature indices, ordered by SU(feature, class) descending.
    pub kept: Vec<usize>,
    /// SU(feature, class) for every input feature.
    pub class_su: Vec<f64>,
    pub bins: usize,
    pub delta: f64,
}

impl FcbfSelection {
    pub fn kept_fraction(&self) -> f64 {
        self.kept.len() as f64 / self.class_su.len().max(1) as f64
    }
}

/// Fast correlation-based filter. Features are ranked by SU against the
/// class labels (descending, ties by lower index), those below `delta` are
/// dropped, and a later feature j is removed when some kept earlier feature
/// i satisfies SU(i, j) >= SU(j, class).
pub fn fcbf_select(
    features: &Matrix,
    labels: &[usize],
    delta: f64,
    bins: usize,
) -> Result<FcbfSelection> {
    if delta < 0.0 {
        return Err(Error::Input(format!("delta must be >= 0, got {delta}")));
    }
    if features.rows() != labels.len() {
        return Err(Error::Input(format!(
            "{} rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Input("fcbf_select on empty data".into()));
    }
    let f = features.cols();
    let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    let binned: Vec<Vec<usize>> = (0..f)
        .map(|j| bin_values(&features.column(j), bins))
        .collect();
    let class_su: Vec<f64> = (0..f)
        .map(|j| su_codes(&binned[j], bins, labels, n_classes))
        .collect();

    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| {
        class_su[b]
            .partial_cmp(&class_su[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &j in &order {
        if class_su[j] < delta {
            break;
        }
        let redundant = kept
            .iter()
            .any(|&i| su_codes(&binned[i], bins, &binned[j], bins) >= class_su[j]);
        if !redundant {
            kept.push(j);
        }
    }
    Ok(FcbfSelection {
        kept,
        class_su,
        bins,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn fair_coin_is_one_bit() {
        let values: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert!((entropy(&values, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_is_zero_bits() {
        assert_eq!(entropy(&[3.3; 50], 10).unwrap(), 0.0);
    }

    #[test]
    fn four_equiprobable_bins_give_two_bits() {
        // hand tally: each bin holds a quarter of the mass -> -4*(1/4)log2(1/4) = 2
        let values: Vec<f64> = (0..400).map(|i| (i % 4) as f64).collect();
        let mut counts = [0usize; 4];
        for &v in &values {
            counts[v as usize] += 1;
        }
        let hand: f64 = counts
            .iter()
            .map(|&c| {
                let p = c as f64 / values.len() as f64;
                -p * p.log2()
            })
            .sum();
        assert!((hand - 2.0).abs() < 1e-12);
        assert!((entropy(&values, 4).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn su_self_is_one_for_non_constant() {
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
        assert!((symmetric_uncertainty(&x, &x, 10).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn su_of_monotone_bijection_is_one() {
        let x: Vec<f64> = (0..90).map(|i| i as f64 / 9.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((symmetric_uncertainty(&x, &y, 10).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn su_of_independent_samples_is_near_zero() {
        // independent draws of size 10,000 at 10 bins; independently
        // verified via the joint-histogram definition in python prototyping
        let mut r = rng::stream(123, "su-indep");
        let x: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let su = symmetric_uncertainty(&x, &y, 10).unwrap();
        assert!(su < 0.05, "su {su}");
    }

    #[test]
    fn su_symmetry_and_range() {
        let mut r = rng::stream(5, "su-sym");
        for _ in 0..20 {
            let x: Vec<f64> = (0..300).map(|_| r.random::<f64>()).collect();
            let y: Vec<f64> = (0..300)
                .map(|i| x[i] * 0.5 + r.random::<f64>())
                .collect();
            let a = symmetric_uncertainty(&x, &y, 8).unwrap();
            let b = symmetric_uncertainty(&y, &x, 8).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((0.0..=1.0 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn length_mismatch_is_input_error() {
        assert!(symmetric_uncertainty(&[1.0, 2.0], &[1.0], 4).is_err());
    }

    #[test]
    fn duplicated_columns_keep_exactly_one_copy() {
        let mut r = rng::stream(9, "dup");
        let n = 400;
        let base: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let labels: Vec<usize> = base.iter().map(|&v| (v > 0.5) as usize).collect();
        let mut data = Vec::with_capacity(n * 3);
        for (i, &v) in base.iter().enumerate() {
            data.push(v);
            data.push(v); // exact duplicate column
            data.push(((i * 37) % 101) as f64 / 101.0); // unrelated column
        }
        let m = Matrix::from_vec(n, 3, data).unwrap();
        let sel = fcbf_select(&m, &labels, 0.0, 10).unwrap();
        let dup_kept = sel.kept.iter().filter(|&&j| j == 0 || j == 1).count();
        assert_eq!(dup_kept, 1, "kept {:?}", sel.kept);
    }

    #[test]
    fn independent_relevant_features_are_all_kept() {
        // each feature carries its own class bit; pairwise joint histograms
        // were checked to be near-independent in prototyping
        let mut r = rng::stream(21, "indep-feat");
        let n = 3000;
        let f = 6;
        let labels: Vec<usize> = (0..n).map(|_| (r.random::<f64>() > 0.5) as usize).collect();
        let mut data = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                let signal = labels[i] as f64;
                data[i * f + j] = signal + 3.0 * r.random::<f64>();
            }
        }
        let m = Matrix::from_vec(n, f, data).unwrap();
        let sel = fcbf_select(&m, &labels, 0.0, 10).unwrap();
        assert_eq!(sel.kept.len(), f, "kept {:?}", sel.kept);
    }

    #[test]
    fn kept_order_is_class_su_descending() {
        let ds = crate::data::synth_blobs(3, 80, 5, 0.8, 31);
        let sel = fcbf_select(&ds.features, &ds.labels, 0.0, 10).unwrap();
        for pair in sel.kept.windows(2) {
            assert!(sel.class_su[pair[0]] >= sel.class_su[pair[1]]);
        }
        assert!(sel.kept.iter().all(|&j| j < 5));
    }

    #[test]
    fn su_matrix_is_symmetric_with_unit_diagonal() {
        let ds = crate::data::synth_blobs(2, 60, 4, 0.5, 8);
        let m = su_matrix(&ds.features, 10).unwrap();
        for i in 0..4 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..4 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
                assert!((0.0..=1.0 + 1e-12).contains(&m.get(i, j)));
            }
        }
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 4);
    }
}
