//! L2-regularized binary logistic regression.
//!
//! The objective is the mean negative log-likelihood plus `||w||^2 / (2C)`;
//! the bias is not penalized. Fitting is a deterministic Newton-CG descent
//! from the zero vector: each outer step solves the Newton system with
//! conjugate gradients on Hessian-vector products (no dense Hessian), then
//! backtracks along the direction until the Armijo condition holds.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 0.1;
pub const DEFAULT_MAX_ITER: usize = 2000;
pub const DEFAULT_GRAD_TOL: f64 = 1e-8;

/// Linear scorer `sigmoid(w . h + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Inverse regularization strength used at fit time.
    pub c: f64,
}

impl LinearClassifier {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.bias
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.cols(),
            });
        }
        Ok(x.iter_rows().map(|r| sigmoid(self.decision(r))).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(sigmoid(self.decision(row)))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Objective value at `(w, b)`.
pub fn objective(x: &Matrix, y: &[bool], c: f64, w: &[f64], b: f64) -> f64 {
    let n = x.rows() as f64;
    let nll: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, &yi)| {
            let z = dot(w, r) + b;
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum();
    nll / n + dot(w, w) / (2.0 * c)
}

/// Gradient at `(w, b)` as `[dL/dw..., dL/db]`.
pub fn gradient(x: &Matrix, y: &[bool], c: f64, w: &[f64], b: f64) -> Vec<f64> {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut g = vec![0.0; d + 1];
    for (r, &yi) in x.iter_rows().zip(y) {
        let resid = (sigmoid(dot(w, r) + b) - f64::from(u8::from(yi))) / n;
        for (gj, xj) in g[..d].iter_mut().zip(r) {
            *gj += resid * xj;
        }
        g[d] += resid;
    }
    for (gj, wj) in g[..d].iter_mut().zip(w) {
        *gj += wj / c;
    }
    g
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticRegression {
    pub c: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            max_iter: DEFAULT_MAX_ITER,
            grad_tol: DEFAULT_GRAD_TOL,
        }
    }
}

impl LogisticRegression {
    pub fn with_c(c: f64) -> Self {
        Self {
            c,
            ..Self::default()
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[bool]) -> Result<LinearClassifier> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                found: y.len(),
            });
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularization C must be positive and finite, got {}",
                self.c
            )));
        }
        let n_pos = y.iter().filter(|&&v| v).count();
        let n_neg = y.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::SingleClass { n_pos, n_neg });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("logistic regression features".into()));
        }

        let d = x.cols();
        let c = self.c;
        let mut theta = vec![0.0; d + 1];
        let mut f = objective(x, y, c, &theta[..d], theta[d]);

        for _ in 0..self.max_iter {
            let g = gradient(x, y, c, &theta[..d], theta[d]);
            let gnorm = norm(&g);
            if gnorm <= self.grad_tol {
                break;
            }
            // Hessian weights p(1-p)/n at the current point.
            let curv: Vec<f64> = x
                .iter_rows()
                .map(|r| {
                    let p = sigmoid(dot(&theta[..d], r) + theta[d]);
                    p * (1.0 - p) / x.rows() as f64
                })
                .collect();
            let hess_vec = |v: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; d + 1];
                for (r, &h) in x.iter_rows().zip(&curv) {
                    let s = h * (dot(&v[..d], r) + v[d]);
                    for (oj, xj) in out[..d].iter_mut().zip(r) {
                        *oj += s * xj;
                    }
                    out[d] += s;
                }
                for (oj, vj) in out[..d].iter_mut().zip(&v[..d]) {
                    *oj += vj / c;
                }
                out
            };
            let forcing = gnorm.sqrt().min(0.5) * gnorm;
            let step = conjugate_gradient(hess_vec, &g, forcing, 2 * (d + 1) + 10);

            let slope = dot(&g, &step);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let fc = objective(x, y, c, &cand[..d], cand[d]);
                if fc <= f + 1e-4 * t * slope + 4.0 * f64::EPSILON * f.abs() {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // Objective flat to machine precision along the Newton direction.
                break;
            }
        }

        let bias = theta.pop().unwrap_or(0.0);
        if theta.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
            return Err(Error::NonFinite("fitted weights".into()));
        }
        Ok(LinearClassifier {
            weights: theta,
            bias,
            c,
        })
    }
}

/// Solves `H s = -g` approximately; `H` is applied through `hv`.
fn conjugate_gradient<F>(hv: F, g: &[f64], tol: f64, max_iter: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut s = vec![0.0; g.len()];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol {
            break;
        }
        let hp = hv(&p);
        let php = dot(&p, &hp);
        if php <= 0.0 {
            break;
        }
        let alpha = rr / php;
        for ((si, ri), (pi, hpi)) in s.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&hp)) {
            *si += alpha * pi;
            *ri -= alpha * hpi;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    if s.iter().all(|v| *v == 0.0) {
        // CG made no progress; fall back to steepest descent.
        return g.iter().map(|v| -v).collect();
    }
    s
}

/// Fits with the default iteration budget and tolerance.
pub fn train_logreg(x: &Matrix, y: &[bool], c: f64) -> Result<LinearClassifier> {
    LogisticRegression::with_c(c).fit(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_has_positive_slope_and_zero_bias() {
        let x = Matrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let clf = train_logreg(&x, &[false, true], 1e4).unwrap();
        assert!(clf.weights[0] > 0.0);
        assert!(clf.bias.abs() < 1e-8);
    }

    #[test]
    fn zero_classifier_outputs_half() {
        let clf = LinearClassifier {
            weights: vec![0.0; 3],
            bias: 0.0,
            c: 0.1,
        };
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.0, 0.0, 9.0]]).unwrap();
        assert_eq!(clf.predict_proba(&x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn large_bias_saturates() {
        let clf = LinearClassifier {
            weights: vec![0.0],
            bias: 50.0,
            c: 0.1,
        };
        let p = clf.predict_row(&[3.0]).unwrap();
        assert!((1.0 - p) < 1e-9);
        assert!(p <= 1.0);
    }

    #[test]
    fn predict_checks_dimension() {
        let clf = LinearClassifier {
            weights: vec![1.0, 2.0],
            bias: 0.0,
            c: 0.1,
        };
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(
            clf.predict_proba(&x),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_single_class_and_nan() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            train_logreg(&x, &[true, true], 0.1),
            Err(Error::SingleClass { .. })
        ));
        let x = Matrix::from_rows(&[[1.0], [f64::NAN]]).unwrap();
        assert!(matches!(
            train_logreg(&x, &[true, false], 0.1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
