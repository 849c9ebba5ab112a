//! Synthetic objective suites with known geometry.
//!
//! Every problem declares its block structure and objectives up front,
//! generates its own data from seed streams, and evaluates losses and exact
//! gradients for arbitrary sample selections. A finite-difference oracle
//! cross-checks every analytic gradient.

mod quadratic;
mod toy_net;

pub use quadratic::{
    conflict_by_construction, head_quadratics, head_quadratics_with_overrides, quadratic_soup, ConflictByConstruction,
    HeadQuadratics, QuadraticSoup, QuadraticSoupOptions,
};
pub use toy_net::{toy_multitask_net, Activation, TaskKind, ToyMultitaskNet, ToyNetConfig};

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::param_space::{axpy, BlockId, GradientMatrix, ObjectiveId, ParamVector};
use crate::rng::stream_rng;

/// Static description of a problem: block structure, objectives, and any
/// analytically known geometry.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub backbone_blocks: Vec<(BlockId, usize)>,
    pub heads: Vec<(BlockId, usize)>,
    pub objectives: Vec<ObjectiveId>,
    pub has_unsupervised: bool,
    pub known_pareto: Option<ParetoSet>,
    /// Minimum of the self-supervised loss, when known in closed form.
    pub unsup_optimum: Option<f64>,
}

impl ProblemSpec {
    pub fn supervised(&self) -> Vec<ObjectiveId> {
        self.objectives
            .iter()
            .filter(|o| o.is_supervised())
            .copied()
            .collect()
    }
}

/// Analytic Pareto set of a problem, in the flattened backbone space.
#[derive(Debug, Clone)]
pub enum ParetoSet {
    Point(Vec<f64>),
    Segment { a: Vec<f64>, b: Vec<f64> },
    Hull(Vec<Vec<f64>>),
}

impl ParetoSet {
    /// Euclidean distance from `point` to the set.
    pub fn distance(&self, point: &[f64]) -> f64 {
        match self {
            ParetoSet::Point(p) => euclidean(point, p),
            ParetoSet::Segment { a, b } => {
                let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                let ap: Vec<f64> = point.iter().zip(a).map(|(x, y)| x - y).collect();
                let denom: f64 = ab.iter().map(|x| x * x).sum();
                let t = if denom < 1e-300 {
                    0.0
                } else {
                    (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / denom).clamp(0.0, 1.0)
                };
                let proj: Vec<f64> = a.iter().zip(&ab).map(|(x, d)| x + t * d).collect();
                euclidean(point, &proj)
            }
            ParetoSet::Hull(vertices) => hull_distance(vertices, point),
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance to the convex hull of `vertices` by projected gradient descent
/// over hull coefficients.
fn hull_distance(vertices: &[Vec<f64>], point: &[f64]) -> f64 {
    let m = vertices.len();
    let residual = |w: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; point.len()];
        for (v, wi) in vertices.iter().zip(w) {
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri += wi * vi;
            }
        }
        for (ri, pi) in r.iter_mut().zip(point) {
            *ri -= pi;
        }
        r
    };
    // Lipschitz bound: largest eigenvalue of V^T V is at most its trace.
    let l: f64 = vertices
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .max(1e-12);
    let step = 1.0 / l;
    let mut w = vec![1.0 / m as f64; m];
    for _ in 0..20_000 {
        let r = residual(&w);
        let shifted: Vec<f64> = w
            .iter()
            .enumerate()
            .map(|(i, wi)| {
                let g: f64 = vertices[i].iter().zip(&r).map(|(v, ri)| v * ri).sum();
                wi - step * g
            })
            .collect();
        let next = crate::simplex::project(&shifted)
            .expect("finite hull coefficients")
            .as_slice()
            .to_vec();
        let change = w
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < 1e-13 {
            break;
        }
    }
    residual(&w).iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Distance from the backbone part of `params` to the problem's analytic
/// Pareto set. Blocks are flattened in id order.
pub fn pareto_distance(problem: &dyn Problem, params: &ParamVector) -> Result<f64> {
    let set = problem
        .spec()
        .known_pareto
        .as_ref()
        .ok_or_else(|| Error::MissingData("problem has no analytic Pareto set".into()))?;
    let mut flat = Vec::new();
    for (id, values) in params.blocks() {
        if id.is_backbone() {
            flat.extend_from_slice(values);
        }
    }
    Ok(set.distance(&flat))
}

/// One stochastic sample batch: labeled or unlabeled indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    pub kind: BatchKind,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Labeled,
    Unlabeled,
}

/// Which samples each objective sees in one evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchSelection {
    pub labeled: BTreeMap<ObjectiveId, SampleBatch>,
    pub unlabeled: Option<SampleBatch>,
}

impl BatchSelection {
    /// Full-batch selection over every objective of `problem`.
    pub fn full(problem: &dyn Problem) -> Self {
        let mut labeled = BTreeMap::new();
        for id in problem.spec().supervised() {
            labeled.insert(
                id,
                SampleBatch {
                    kind: BatchKind::Labeled,
                    indices: (0..problem.labeled_size(&id)).collect(),
                },
            );
        }
        let unlabeled = problem.spec().has_unsupervised.then(|| SampleBatch {
            kind: BatchKind::Unlabeled,
            indices: (0..problem.unlabeled_size()).collect(),
        });
        BatchSelection { labeled, unlabeled }
    }

    /// Same labeled selection without the unlabeled part.
    pub fn without_unlabeled(&self) -> Self {
        BatchSelection {
            labeled: self.labeled.clone(),
            unlabeled: None,
        }
    }

    pub fn with_unlabeled(&self, batch: SampleBatch) -> Self {
        BatchSelection {
            labeled: self.labeled.clone(),
            unlabeled: Some(batch),
        }
    }
}

/// Losses and exact gradients of one evaluation.
///
/// Backbone gradients are columns of `backbone`; each supervised objective's
/// head gradient is private and carried in `head_grads`.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub losses: BTreeMap<ObjectiveId, f64>,
    pub backbone: GradientMatrix,
    pub head_grads: BTreeMap<ObjectiveId, Vec<f64>>,
    pub samples: BatchSelection,
}

/// A synthetic training problem. Implementations are immutable after
/// construction; evaluation is pure given `(params, batch)`.
pub trait Problem {
    fn spec(&self) -> &ProblemSpec;

    /// Initial parameters from the `init` stream of `seed`.
    fn initial_params(&self, seed: u64) -> ParamVector;

    /// Losses and gradients for the requested selection. Supervised
    /// objectives are evaluated iff selected; the unsupervised objective is
    /// evaluated iff an unlabeled batch is present.
    fn evaluate(&self, params: &ParamVector, batch: &BatchSelection) -> Result<ObjectiveEval>;

    fn labeled_size(&self, id: &ObjectiveId) -> usize;

    fn unlabeled_size(&self) -> usize;

    /// False when every batch equals the full dataset, making evaluation
    /// deterministic.
    fn is_stochastic(&self) -> bool;
}

/// The per-iteration batch draw: two independent labeled samples plus
/// unlabeled samples when the problem has a self-supervised objective.
#[derive(Debug, Clone)]
pub struct IterationBatches {
    pub xi1: BatchSelection,
    pub xi2: BatchSelection,
    pub zeta1: Option<SampleBatch>,
    pub zeta2: Option<SampleBatch>,
}

/// Draw `(xi1, xi2, zeta...)` for one iteration from disjoint seed streams.
///
/// Deterministic problems always see the full batch, collapsing the double
/// sample into a single exact gradient. Index draws are uniform with
/// replacement, so sampled gradients are unbiased estimates of the full-batch
/// gradient.
pub fn sample_batches(
    problem: &dyn Problem,
    seed: u64,
    iteration: u64,
    batch_size: usize,
) -> IterationBatches {
    if !problem.is_stochastic() {
        let full = BatchSelection::full(problem);
        let zeta = full.unlabeled.clone();
        return IterationBatches {
            xi1: full.without_unlabeled(),
            xi2: full.without_unlabeled(),
            zeta1: zeta.clone(),
            zeta2: zeta,
        };
    }
    let draw_labeled = |stream: &str| -> BatchSelection {
        let mut rng = stream_rng(seed, stream, iteration);
        let mut labeled = BTreeMap::new();
        for id in problem.spec().supervised() {
            let n = problem.labeled_size(&id);
            let size = batch_size.min(n).max(1);
            let indices = (0..size).map(|_| rng.random_range(0..n)).collect();
            labeled.insert(id, SampleBatch { kind: BatchKind::Labeled, indices });
        }
        BatchSelection { labeled, unlabeled: None }
    };
    let draw_unlabeled = |stream: &str| -> Option<SampleBatch> {
        if !problem.spec().has_unsupervised {
            return None;
        }
        let mut rng = stream_rng(seed, stream, iteration);
        let n = problem.unlabeled_size();
        let size = batch_size.min(n).max(1);
        Some(SampleBatch {
            kind: BatchKind::Unlabeled,
            indices: (0..size).map(|_| rng.random_range(0..n)).collect(),
        })
    };
    IterationBatches {
        xi1: draw_labeled("xi1"),
        xi2: draw_labeled("xi2"),
        zeta1: draw_unlabeled("zeta1"),
        zeta2: draw_unlabeled("zeta2"),
    }
}

/// Central-difference gradients `(l(x + h e_i) - l(x - h e_i)) / 2h` for every
/// objective over the full batch, sweeping all coordinates once.
pub fn finite_diff_gradient(
    problem: &dyn Problem,
    params: &ParamVector,
    h: f64,
) -> Result<Vec<(ObjectiveId, ParamVector)>> {
    if h <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let full = BatchSelection::full(problem);
    let objectives = problem.spec().objectives.clone();
    let mut grads: Vec<ParamVector> = objectives.iter().map(|_| params.zeros_like()).collect();

    let block_ids: Vec<BlockId> = params.block_ids().copied().collect();
    for block in &block_ids {
        let dim = params.block(block).map(|b| b.len()).unwrap_or(0);
        for coord in 0..dim {
            let mut basis = params.zeros_like();
            let mut unit = vec![0.0; dim];
            unit[coord] = 1.0;
            basis.update_block(block, 1.0, &unit)?;
            let plus = axpy(params, h, &basis, None)?;
            let minus = axpy(params, -h, &basis, None)?;
            let eval_plus = problem.evaluate(&plus, &full)?;
            let eval_minus = problem.evaluate(&minus, &full)?;
            for (obj_idx, id) in objectives.iter().enumerate() {
                let lp = eval_plus.losses[id];
                let lm = eval_minus.losses[id];
                let d = (lp - lm) / (2.0 * h);
                let mut delta = vec![0.0; dim];
                delta[coord] = d;
                grads[obj_idx].update_block(block, 1.0, &delta)?;
            }
        }
    }
    Ok(objectives.into_iter().zip(grads).collect())
}

/// Assembled full-structure analytic gradient of one objective: backbone
/// columns plus the objective's own head gradient, zeros elsewhere.
pub fn analytic_full_gradient(
    params: &ParamVector,
    eval: &ObjectiveEval,
    id: &ObjectiveId,
) -> Result<ParamVector> {
    let mut out = params.zeros_like();
    let column = eval
        .backbone
        .column_for(id)
        .ok_or_else(|| Error::MissingData(format!("backbone gradient for {id}")))?;
    out.add_scaled_blocks(1.0, column)?;
    if let Some(head_block) = id.head_block() {
        if let Some(grad) = eval.head_grads.get(id) {
            out.update_block(&head_block, 1.0, grad)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        let seg = ParetoSet::Segment {
            a: vec![1.0, 0.0],
            b: vec![-1.0, 0.0],
        };
        // Perpendicular distance from above the segment.
        assert!((seg.distance(&[0.0, 0.5]) - 0.5).abs() < 1e-12);
        // On the segment.
        assert!(seg.distance(&[0.25, 0.0]) < 1e-12);
        // Beyond an endpoint the projection clamps to the vertex:
        // |(2,0) - (1,0)| = 1.
        assert!((seg.distance(&[2.0, 0.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_and_hull_distance() {
        let p = ParetoSet::Point(vec![1.0, 2.0]);
        assert!((p.distance(&[1.0, 0.0]) - 2.0).abs() < 1e-12);

        let hull = ParetoSet::Hull(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]);
        // Interior point.
        assert!(hull.distance(&[0.5, 0.5]) < 1e-9);
        // Point below the triangle projects onto the bottom edge.
        assert!((hull.distance(&[1.0, -1.0]) - 1.0).abs() < 1e-8);
        // Point beyond a vertex projects onto the vertex.
        assert!((hull.distance(&[3.0, 0.0]) - 1.0).abs() < 1e-8);
    }
}
