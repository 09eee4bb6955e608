use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Per-dimension z-scoring fitted on training rows.
///
/// Uses the sample (n-1) standard deviation. Columns with zero variance map to
/// zero after the mean shift: their divisor is taken as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.rows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / (n - 1) as f64).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_in_place(out.row_mut(i));
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: row.len(),
            });
        }
        let mut out = row.to_vec();
        self.transform_in_place(&mut out);
        Ok(out)
    }

    fn transform_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            let scale = if *s > 0.0 { *s } else { 1.0 };
            *v = (*v - m) / scale;
        }
    }

    pub fn fit_transform(x: &Matrix) -> Result<(Self, Matrix)> {
        let s = Self::fit(x)?;
        let t = s.transform(x)?;
        Ok((s, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_sample_std() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let (s, t) = Standardizer::fit_transform(&x).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        // sample std of {1, 3} is sqrt(2)
        assert!((s.std[0] - 2f64.sqrt()).abs() < 1e-15);
        let h = 1.0 / 2f64.sqrt();
        assert!((t.row(0)[0] + h).abs() < 1e-15);
        assert!((t.row(1)[0] - h).abs() < 1e-15);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let x = Matrix::from_rows(&[[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]).unwrap();
        let (s, t) = Standardizer::fit_transform(&x).unwrap();
        assert_eq!(s.std[0], 0.0);
        assert!(t.iter_rows().all(|r| r[0] == 0.0));
    }

    #[test]
    fn unit_variance_columns_only_shift() {
        // columns already have sample std 1
        let x = Matrix::from_rows(&[[1.0, 10.0], [2.0, 11.0], [3.0, 12.0]]).unwrap();
        let (s, t) = Standardizer::fit_transform(&x).unwrap();
        assert_eq!(s.std, vec![1.0, 1.0]);
        for (orig, tr) in x.iter_rows().zip(t.iter_rows()) {
            assert_eq!(tr[0], orig[0] - 2.0);
            assert_eq!(tr[1], orig[1] - 11.0);
        }
    }

    #[test]
    fn rejects_single_row() {
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(Standardizer::fit(&x).is_err());
    }

    #[test]
    fn refit_on_standardized_is_identity() {
        let x = Matrix::from_rows(&[[0.3, -2.0], [1.7, 4.0], [-0.4, 0.5], [2.2, 1.0]]).unwrap();
        let (_, t) = Standardizer::fit_transform(&x).unwrap();
        let s2 = Standardizer::fit(&t).unwrap();
        for (m, s) in s2.mean.iter().zip(&s2.std) {
            assert!(m.abs() < 1e-10);
            assert!((s - 1.0).abs() < 1e-10);
        }
    }
}
