//! Probability-simplex geometry for dynamic objective weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum-to-one invariant.
pub const SUM_TOL: f64 = 1e-9;

/// A point of the probability simplex: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights {
    values: Vec<f64>,
}

impl SimplexWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("simplex of dimension 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("simplex weights".into()));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("simplex weights must be nonnegative".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Config(format!(
                "simplex weights sum to {sum}, expected 1"
            )));
        }
        Ok(SimplexWeights { values })
    }

    /// All entries `1/m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyInput("simplex of dimension 0".into()));
        }
        Ok(SimplexWeights {
            values: vec![1.0 / m as f64; m],
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// Euclidean projection onto the probability simplex.
///
/// Sort-then-threshold: with entries sorted decreasingly, find the largest
/// support size `rho` with `u_rho > (sum of top rho - 1) / rho`; every output
/// entry is `max(v_i - theta, 0)` for the common shift `theta`. Stable sort
/// keeps tie handling deterministic. Idempotent up to roundoff.
pub fn project(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::EmptyInput("projection of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (i as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let values: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    SimplexWeights::new(values)
}
