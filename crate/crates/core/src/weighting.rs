//! Dynamic objective weighting.
//!
//! The weight vector lives on the probability simplex and follows a projected
//! stochastic gradient step driven by the Gram product of two independently
//! sampled gradient matrices. The resulting weighted negative gradient sum is
//! the conflict-avoidant update direction; the minimum weighted-gradient norm
//! over the simplex measures Pareto stationarity.

use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::param_space::{combine, inner, BlockId, GradientMatrix, ParamVector};
use crate::simplex::{project, SimplexWeights};

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_STATIONARITY_TOL: f64 = 1e-10;
pub const DEFAULT_STATIONARITY_MAX_ITER: usize = 10_000;

/// Step-size schedule for the weight update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    Constant { base: f64 },
    /// `base / sqrt(k + 1)` at iteration `k`.
    InvSqrt { base: f64 },
}

impl GammaSchedule {
    pub fn value(&self, iteration: usize) -> f64 {
        match self {
            GammaSchedule::Constant { base } => *base,
            GammaSchedule::InvSqrt { base } => base / ((iteration + 1) as f64).sqrt(),
        }
    }

    pub fn base(&self) -> f64 {
        match self {
            GammaSchedule::Constant { base } | GammaSchedule::InvSqrt { base } => *base,
        }
    }
}

/// One simplex weight vector with its step schedule, iteration counter, and
/// optional restriction of the Gram computation to conflicting layers.
#[derive(Debug, Clone)]
pub struct WeightState {
    pub lambda: SimplexWeights,
    pub gamma: GammaSchedule,
    pub iteration: usize,
    pub restriction: Option<BTreeSet<BlockId>>,
}

impl WeightState {
    /// Uniform initialization; the weights then evolve across iterations
    /// without resets (warm start).
    pub fn new(m: usize, gamma: GammaSchedule) -> Result<Self> {
        if gamma.base() <= 0.0 {
            return Err(Error::Config("gamma must be positive".into()));
        }
        Ok(WeightState {
            lambda: SimplexWeights::uniform(m)?,
            gamma,
            iteration: 0,
            restriction: None,
        })
    }

    /// Projected stochastic weight step
    /// `lambda <- project(lambda - gamma * (G1^T G2) * lambda)`.
    ///
    /// `g1` and `g2` are gradient matrices from two independent samples; the
    /// restriction set, when present, limits the Gram product (not the
    /// eventual parameter update) to those blocks.
    pub fn modo_step(&mut self, g1: &GradientMatrix, g2: &GradientMatrix) -> Result<()> {
        let k = gram(g1, g2, self.restriction.as_ref())?;
        if !k.is_finite() {
            return Err(Error::NonFinite("gram matrix in weight update".into()));
        }
        let gamma = self.gamma.value(self.iteration);
        let klambda = k.mul_vec(self.lambda.as_slice())?;
        let shifted: Vec<f64> = self
            .lambda
            .as_slice()
            .iter()
            .zip(&klambda)
            .map(|(l, kl)| l - gamma * kl)
            .collect();
        self.lambda = project(&shifted)?;
        self.iteration += 1;
        Ok(())
    }
}

/// Gram matrix of two gradient samples: entry `(i, j)` is the inner product
/// of column `i` of `g1` with column `j` of `g2` over the restriction set.
/// Not symmetric in general (the two samples are independent).
pub fn gram(
    g1: &GradientMatrix,
    g2: &GradientMatrix,
    restriction: Option<&BTreeSet<BlockId>>,
) -> Result<SquareMatrix> {
    if g1.objectives() != g2.objectives() {
        return Err(Error::Config(
            "gram requires the same objective ordering in both matrices".into(),
        ));
    }
    let m = g1.len();
    let mut out = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            out.set(i, j, inner(g1.column(i), g2.column(j), restriction)?);
        }
    }
    Ok(out)
}

/// A conflict-avoidant descent direction: the negative weighted gradient sum,
/// with the weights that produced it and a fingerprint of the source matrix.
#[derive(Debug, Clone)]
pub struct Direction {
    pub vector: ParamVector,
    pub weights_used: SimplexWeights,
    source_hash: u64,
}

impl Direction {
    /// True iff this direction was built from `matrix`.
    pub fn built_from(&self, matrix: &GradientMatrix) -> bool {
        self.source_hash == gradient_hash(matrix)
    }
}

fn gradient_hash(matrix: &GradientMatrix) -> u64 {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    for (idx, id) in matrix.objectives().iter().enumerate() {
        id.to_string().hash(&mut hasher);
        for (block, values) in matrix.column(idx).blocks() {
            block.to_string().hash(&mut hasher);
            for v in values {
                v.to_bits().hash(&mut hasher);
            }
        }
    }
    hasher.finish()
}

/// `-1 * (weighted column sum)`: always weights the full gradients, even when
/// the weights themselves were computed on a restricted Gram.
pub fn ca_direction(matrix: &GradientMatrix, weights: &SimplexWeights) -> Result<Direction> {
    let combined = combine(matrix, weights)?;
    let vector = crate::param_space::axpy(&combined.zeros_like(), -1.0, &combined, None)?;
    Ok(Direction {
        vector,
        weights_used: weights.clone(),
        source_hash: gradient_hash(matrix),
    })
}

/// Pareto-stationarity measure: `min_{lambda in simplex} ||G lambda||`.
///
/// Projected gradient descent on `0.5 ||G lambda||^2` with step `1 / L`,
/// where `L` is the largest eigenvalue of `G^T G` from power iteration
/// (falling back to the conservative bound `trace(G^T G)` if the iteration
/// does not settle). Stops when the weight change drops below `tol` or after
/// `max_iter` steps.
pub fn stationarity_measure(matrix: &GradientMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let a = gram(matrix, matrix, None)?;
    if !a.is_finite() {
        return Err(Error::NonFinite("gram matrix in stationarity measure".into()));
    }
    let l = match a.largest_eigenvalue(500, 1e-13) {
        Some(l) => l,
        None => a.trace(),
    };
    if l <= 0.0 {
        // All columns are zero; any simplex point gives a zero combination.
        return Ok(0.0);
    }
    let step = 1.0 / l;
    let mut lambda = SimplexWeights::uniform(matrix.len())?;
    for _ in 0..max_iter {
        let grad = a.mul_vec(lambda.as_slice())?;
        let shifted: Vec<f64> = lambda
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(x, g)| x - step * g)
            .collect();
        let next = project(&shifted)?;
        let change = lambda
            .as_slice()
            .iter()
            .zip(next.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        lambda = next;
        if change < tol {
            break;
        }
    }
    Ok(combine(matrix, &lambda)?.norm(None))
}
