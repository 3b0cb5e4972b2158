//! Property tests over the crate's core invariants.

use proptest::prelude::*;

use forgetbench::data::{make_permutation_stream, synth_blobs_pair};
use forgetbench::fcbf::symmetric_uncertainty;
use forgetbench::linalg::Matrix;
use forgetbench::metrics::{omega_base, omega_new};
use forgetbench::nncore::{loss_grad, softmax_rows, NetParams};
use forgetbench::pathnet::{PathGenotype, PathNetTopology};
use forgetbench::rng;

proptest! {
    #[test]
    fn softmax_rows_always_sum_to_one(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = rng::stream(seed, "prop-softmax");
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, (r.random::<f64>() - 0.5) * 200.0);
            }
        }
        let p = softmax_rows(&m);
        for i in 0..rows {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn backprop_matches_finite_differences_on_random_nets(seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rng::stream(seed, "prop-grad");
        let dims = [
            1 + (seed % 3) as usize + 1,
            2 + (seed % 4) as usize,
            2 + (seed % 2) as usize,
        ];
        let net = NetParams::new(&dims, &mut r);
        let mut x = Matrix::zeros(2, dims[0]);
        for i in 0..2 {
            for j in 0..dims[0] {
                x.set(i, j, r.random::<f64>() * 2.0 - 1.0);
            }
        }
        let y: Vec<usize> = (0..2).map(|_| r.random_range(0..dims[2])).collect();
        let (_, grads) = loss_grad(&net, &x, &y).unwrap();
        let h = 1e-6;
        for k in 0..net.n_params() {
            let orig = net.get_param(k);
            let mut plus = net.clone();
            plus.set_param(k, orig + h);
            let mut minus = net.clone();
            minus.set_param(k, orig - h);
            let num = (loss_grad(&plus, &x, &y).unwrap().0
                - loss_grad(&minus, &x, &y).unwrap().0)
                / (2.0 * h);
            let ana = grads.get_param(k);
            let denom = num.abs().max(ana.abs()).max(1e-4);
            prop_assert!((num - ana).abs() / denom < 1e-5);
        }
    }

    #[test]
    fn symmetric_uncertainty_is_symmetric_and_unit_bounded(
        seed in any::<u64>(),
        n in 10usize..300,
        bins in 2usize..16,
    ) {
        use rand::Rng;
        let mut r = rng::stream(seed, "prop-su");
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i] * 0.3 + r.random::<f64>()).collect();
        let a = symmetric_uncertainty(&x, &y, bins).unwrap();
        let b = symmetric_uncertainty(&y, &x, bins).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn omega_base_is_linear_and_omega_new_is_a_mean(
        curve in proptest::collection::vec(0.0f64..1.0, 1..12),
        scale in 0.01f64..1.0,
        ideal in 0.05f64..1.0,
    ) {
        let t = curve.len() + 1;
        let base = omega_base(&curve, ideal, t).unwrap();
        let scaled: Vec<f64> = curve.iter().map(|v| v * scale).collect();
        let scaled_base = omega_base(&scaled, ideal, t).unwrap();
        prop_assert!((scaled_base - scale * base).abs() < 1e-9);

        let mean = curve.iter().sum::<f64>() / curve.len() as f64;
        prop_assert!((omega_new(&curve, t).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn genotype_mutation_stays_valid(seed in any::<u64>(), steps in 1usize..60) {
        let topology = PathNetTopology {
            layers: 1 + (seed % 3) as usize,
            modules: 3 + (seed % 8) as usize,
            active: 1 + (seed % 3) as usize,
            units: 4,
        };
        let mut r = rng::stream(seed, "prop-mut");
        let mut g = PathGenotype::random(&topology, &mut r);
        prop_assert!(g.is_valid(&topology));
        for _ in 0..steps {
            g = g.mutate(&topology, &mut r);
            prop_assert!(g.is_valid(&topology), "{g:?} invalid for {topology:?}");
        }
    }

    #[test]
    fn permutation_sessions_preserve_per_row_multisets(seed in any::<u64>(), t in 2usize..5) {
        let (train, test) = synth_blobs_pair(2, 6, 4, 5, 0.5, seed);
        let sessions = make_permutation_stream(train, test, t, seed).unwrap();
        let (x1, _) = sessions[0].train();
        for s in &sessions[1..] {
            let (xs, _) = s.train();
            for i in 0..x1.rows() {
                let mut a: Vec<f64> = x1.row(i).to_vec();
                let mut b: Vec<f64> = xs.row(i).to_vec();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
            }
        }
    }
}
