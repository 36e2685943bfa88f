use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observational sample `(Xᵢ, Aᵢ, Yᵢ)`, covariates stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from covariate rows, a 0/1 treatment vector and outcomes.
    pub fn new(rows: Vec<Vec<f64>>, a: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        let mut x = Vec::with_capacity(n * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            x.extend_from_slice(row);
        }
        Self::from_flat(x, d, a, y)
    }

    /// Builds a dataset from a row-major covariate buffer of width `d`.
    pub fn from_flat(x: Vec<f64>, d: usize, a: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("dataset needs at least one row and one covariate".into()));
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if let Some(i) = a.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                a[i]
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        let treated = a.iter().filter(|&&v| v == 1.0).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidInput(
                "dataset needs at least one treated and one control observation".into(),
            ));
        }
        Ok(Dataset { n, d, x, a, y })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    #[inline]
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1.0).count()
    }

    /// `βᵀXᵢ` for every row.
    pub fn index_values(&self, beta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(beta.len(), self.d);
        self.rows()
            .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// Same covariates and treatments with a replacement outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.x.clone(), self.d, self.a.clone(), y)
    }

    /// Rows selected (with repetition allowed) by `rows`.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        let mut a = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for &i in rows {
            x.extend_from_slice(self.row(i));
            a.push(self.a[i]);
            y.push(self.y[i]);
        }
        Self::from_flat(x, self.d, a, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_treatment() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(Dataset::new(rows.clone(), vec![1.0, 0.5], vec![0.0, 0.0]).is_err());
        assert!(Dataset::new(rows.clone(), vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(Dataset::new(rows.clone(), vec![1.0, 0.0], vec![0.0, f64::NAN]).is_err());
        let ds = Dataset::new(rows, vec![1.0, 0.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.index_values(&[2.0]), vec![2.0, 4.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![2.0]];
        assert!(matches!(
            Dataset::new(rows, vec![1.0, 0.0], vec![0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
