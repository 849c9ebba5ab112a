//! Small dense square matrices (Gram and cosine matrices over a handful of
//! objectives). Row-major, f64.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "square matrix expects {n} entries per row, got {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `A v` with a fixed summation order (row by row, left to right).
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "matrix of size {} times vector of length {}",
                self.n,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest eigenvalue of a symmetric PSD matrix by power iteration.
    ///
    /// Returns `None` when the Rayleigh quotient has not stabilized within
    /// `max_iter`; callers fall back to a conservative bound such as the trace.
    pub fn largest_eigenvalue(&self, max_iter: usize, tol: f64) -> Option<f64> {
        let n = self.n;
        if n == 0 {
            return Some(0.0);
        }
        // Deterministic start with unequal entries so we are not orthogonal
        // to the leading eigenvector of structured matrices.
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * i as f64).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut rayleigh = 0.0;
        for _ in 0..max_iter {
            let av = self.mul_vec(&v).expect("size checked");
            let next_rayleigh: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            let av_norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
            if av_norm < 1e-300 {
                return Some(0.0); // matrix is (numerically) zero on this vector
            }
            v = av.iter().map(|x| x / av_norm).collect();
            if (next_rayleigh - rayleigh).abs() <= tol * next_rayleigh.abs().max(1.0) {
                return Some(next_rayleigh);
            }
            rayleigh = next_rayleigh;
        }
        None
    }
}
