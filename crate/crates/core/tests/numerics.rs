mod common;

use common::*;
use probekit::numerics::{
    auroc_value, bootstrap_ci, gradient, objective, spearman, stratified_kfold, train_logreg,
    LogisticRegression, Standardizer,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn frozen_two_dimensional_set_matches_reference_solution() {
    let (rows, y, w, b) = frozen_logreg_set();
    let m = LogisticRegression::with_c(0.1)
        .fit(&matrix(&rows), &y)
        .unwrap();
    for j in 0..2 {
        assert!(
            (m.weights[j] - w[j]).abs() < 1e-6,
            "w[{j}] = {}",
            m.weights[j]
        );
    }
    assert!((m.bias - b).abs() < 1e-6, "b = {}", m.bias);
}

#[test]
fn reference_optimizer_agrees_with_frozen_solution() {
    let (rows, y, w, b) = frozen_logreg_set();
    let (rw, rb) = reference_logreg(&rows, &y, 0.1);
    assert!((rw[0] - w[0]).abs() < 1e-8 && (rw[1] - w[1]).abs() < 1e-8 && (rb - b).abs() < 1e-8);
}

#[test]
fn logreg_matches_reference_optimizer_on_random_sets() {
    for seed in 0..25 {
        let (rows, y) = random_problem(seed);
        for c in [0.1, 1.0] {
            let m = train_logreg(&matrix(&rows), &y, c).unwrap();
            let (rw, rb) = reference_logreg(&rows, &y, c);
            for (a, r) in m.weights.iter().zip(&rw) {
                assert!((a - r).abs() < 1e-6, "seed {seed} C {c}: {a} vs {r}");
            }
            assert!(
                (m.bias - rb).abs() < 1e-6,
                "seed {seed} C {c}: bias {} vs {rb}",
                m.bias
            );
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..25 {
        let (rows, y) = random_problem(100 + seed);
        let x = matrix(&rows);
        let d = x.cols();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let g = gradient(&x, &y, 0.1, &w, b);
        let h = 1e-6;
        let mut fd = Vec::with_capacity(d + 1);
        for j in 0..=d {
            let mut wp = w.clone();
            let mut wm = w.clone();
            let (mut bp, mut bm) = (b, b);
            if j < d {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            fd.push(
                (objective(&x, &y, 0.1, &wp, bp) - objective(&x, &y, 0.1, &wm, bm)) / (2.0 * h),
            );
        }
        let num: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(
            num / den < 1e-5,
            "seed {seed}: relative error {}",
            num / den
        );
    }
}

#[test]
fn auroc_equals_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=50);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..5) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let a = auroc_value(&scores, &labels).unwrap();
        let b = brute_auroc(&scores, &labels);
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        done += 1;
    }
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| {
                l.iter().any(|&x| x) && l.iter().any(|&x| !x)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_bounded_and_antisymmetric((s, l) in scored_labels()) {
        let a = auroc_value(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc_value(&neg, &l).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn auroc_invariant_to_monotone_maps((s, l) in scored_labels()) {
        let a = auroc_value(&s, &l).unwrap();
        let t: Vec<f64> = s.iter().map(|x| (x / 3.0).exp() * 2.0 + 1.0).collect();
        prop_assert!((auroc_value(&t, &l).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn auroc_invariant_to_joint_permutation((s, l) in scored_labels(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ps: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let pl: Vec<bool> = idx.iter().map(|&i| l[i]).collect();
        prop_assert!((auroc_value(&ps, &pl).unwrap() - auroc_value(&s, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_interval_contains_point((s, l) in scored_labels(), seed in 0u64..1000) {
        let m = bootstrap_ci(&s, &l, 200, seed).unwrap();
        let (lo, hi) = (m.ci_low.unwrap(), m.ci_high.unwrap());
        prop_assert!(lo <= m.auroc && m.auroc <= hi);
        prop_assert!(0.0 <= lo && hi <= 1.0);
    }

    #[test]
    fn fitted_objective_not_above_zero_model(seed in 0u64..10_000) {
        let (rows, y) = random_problem(seed);
        let x = matrix(&rows);
        let m = train_logreg(&x, &y, 0.1).unwrap();
        let zero = vec![0.0; x.cols()];
        prop_assert!(objective(&x, &y, 0.1, &m.weights, m.bias) <= objective(&x, &y, 0.1, &zero, 0.0) + 1e-12);
        let g = gradient(&x, &y, 0.1, &m.weights, m.bias);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_sd(seed in 0u64..10_000) {
        let (rows, _) = random_problem(seed);
        prop_assume!(rows.len() >= 3);
        let (_, z) = Standardizer::fit_transform(&matrix(&rows)).unwrap();
        let n = z.rows() as f64;
        for j in 0..z.cols() {
            let col: Vec<f64> = z.iter_rows().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var < 1e-12 || (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn folds_partition_and_stratify(n_pos in 5usize..40, n_neg in 5usize..40, k in 2usize..6, seed in any::<u64>()) {
        let labels: Vec<bool> = (0..n_pos + n_neg).map(|i| i % (n_pos + n_neg) < n_pos).collect();
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        let mut seen = vec![0usize; labels.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.test.len(), labels.len());
            let p = f.test.iter().filter(|&&i| labels[i]).count();
            let expect = n_pos as f64 / k as f64;
            prop_assert!((p as f64 - expect).abs() < 1.0 + 1e-9);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn spearman_bounded_and_rank_based(v in prop::collection::vec(-100.0f64..100.0, 3..40)) {
        let w: Vec<f64> = v.iter().map(|x| x.powi(3)).collect();
        let rho = spearman(&v, &w);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        let distinct = {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|p| p[0] != p[1])
        };
        if distinct {
            prop_assert!((rho - 1.0).abs() < 1e-12);
        }
    }
}
