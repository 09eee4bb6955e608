#![allow(dead_code)]

use probekit::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pair-counting AUROC: wins plus half the ties over all (positive, negative) pairs.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Plain Nesterov gradient descent on mean NLL + |w|^2 / (2C), bias unpenalized.
/// Written independently of the library optimizer.
pub fn reference_logreg(rows: &[Vec<f64>], y: &[bool], c: f64) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let max_sq = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (0.25 * (max_sq + 1.0) + 1.0 / c);
    let grad = |p: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; d + 1];
        for (r, &yi) in rows.iter().zip(y) {
            let z: f64 = r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + p[d];
            let e = (sig(z) - if yi { 1.0 } else { 0.0 }) / n;
            for j in 0..d {
                g[j] += e * r[j];
            }
            g[d] += e;
        }
        for j in 0..d {
            g[j] += p[j] / c;
        }
        g
    };
    let mut x = vec![0.0; d + 1];
    let mut prev = x.clone();
    for k in 0..2_000_000usize {
        let mom = k as f64 / (k as f64 + 3.0);
        let look: Vec<f64> = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| a + mom * (a - b))
            .collect();
        let g = grad(&look);
        prev = x;
        x = look.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
        if k % 64 == 0 && grad(&x).iter().all(|v| v.abs() < 1e-13) {
            break;
        }
    }
    let b = x[d];
    x.truncate(d);
    (x, b)
}

/// Small random classification problem with both classes present.
pub fn random_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(8..40);
        let d = rng.random_range(1..5);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.random_bool(0.5);
            let row: Vec<f64> = (0..d)
                .map(|j| rng.random_range(-2.0..2.0) + if label { shift[j] } else { 0.0 })
                .collect();
            rows.push(row);
            y.push(label);
        }
        if y.iter().any(|&l| l) && y.iter().any(|&l| !l) {
            return (rows, y);
        }
    }
}

pub fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

/// Frozen 20-point set with its reference solution at C = 0.1.
pub fn frozen_logreg_set() -> (Vec<Vec<f64>>, Vec<bool>, [f64; 2], f64) {
    let neg = [
        [-1.2, -0.7],
        [-0.8, -1.5],
        [-1.9, -0.2],
        [-0.3, -1.1],
        [-1.4, -1.3],
        [-0.6, -0.4],
        [-1.1, 0.1],
        [-0.2, -0.9],
        [-1.7, -0.8],
        [-0.9, -0.6],
    ];
    let pos = [
        [1.1, 0.9],
        [0.7, 1.6],
        [1.8, 0.3],
        [0.4, 1.2],
        [1.5, 1.1],
        [0.6, 0.5],
        [1.2, -0.1],
        [0.3, 0.8],
        [1.6, 0.7],
        [0.8, 0.4],
    ];
    let rows: Vec<Vec<f64>> = neg.iter().chain(&pos).map(|r| r.to_vec()).collect();
    let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
    (
        rows,
        y,
        [0.04812254525788556, 0.03551368133865193],
        0.00023948135204555,
    )
}

pub const ANALYTIC_AUROC_DELTA2: f64 = 0.9213503964748574;
