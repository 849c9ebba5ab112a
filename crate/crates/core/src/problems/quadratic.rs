//! Quadratic problem families with analytically known geometry.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::param_space::{BlockId, GradientMatrix, ObjectiveId, ParamVector};
use crate::problems::{
    BatchSelection, ObjectiveEval, ParetoSet, Problem, ProblemSpec,
};
use crate::rng::stream_rng;

fn supervised(m: usize) -> ObjectiveId {
    ObjectiveId::Supervised { language: m, task: 0 }
}

/// Build the eval record shared by the quadratic families.
fn eval_from_parts(
    spec: &ProblemSpec,
    batch: &BatchSelection,
    losses: BTreeMap<ObjectiveId, f64>,
    mut backbone_cols: BTreeMap<ObjectiveId, ParamVector>,
    head_grads: BTreeMap<ObjectiveId, Vec<f64>>,
) -> Result<ObjectiveEval> {
    let mut entries = Vec::new();
    for id in &spec.objectives {
        if let Some(col) = backbone_cols.remove(id) {
            entries.push((*id, col));
        }
    }
    for (id, loss) in &losses {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss of objective {id}")));
        }
    }
    Ok(ObjectiveEval {
        losses,
        backbone: GradientMatrix::new(entries)?,
        head_grads,
        samples: batch.clone(),
    })
}

/// Optional knobs beyond the basic constructor arguments.
#[derive(Debug, Clone)]
pub struct QuadraticSoupOptions {
    /// Per-objective curvature scales (all 1 by default).
    pub scales: Option<Vec<f64>>,
    /// Starting point (origin by default).
    pub init: Option<Vec<f64>>,
    /// Stochastic sample count per objective (rounded up to even).
    pub samples: usize,
    /// Data-stream seed for the sample perturbations.
    pub seed: u64,
}

impl Default for QuadraticSoupOptions {
    fn default() -> Self {
        QuadraticSoupOptions { scales: None, init: None, samples: 64, seed: 0 }
    }
}

/// `M` objectives `l_m = 0.5 * s_m * ||theta - c_m||^2`, optionally with a
/// zero-mean linear perturbation per sample. The Pareto set is the convex
/// hull of the centers.
#[derive(Debug, Clone)]
pub struct QuadraticSoup {
    spec: ProblemSpec,
    centers: Vec<Vec<f64>>,
    scales: Vec<f64>,
    noise_scale: f64,
    /// Per objective, per sample offsets generated in (o, -o) pairs so the
    /// full-batch mean is exactly the noiseless gradient.
    offsets: Vec<Vec<Vec<f64>>>,
    init: Vec<f64>,
}

pub fn quadratic_soup(
    m: usize,
    dim: usize,
    centers: Vec<Vec<f64>>,
    noise_scale: f64,
) -> Result<QuadraticSoup> {
    QuadraticSoup::with_options(m, dim, centers, noise_scale, QuadraticSoupOptions::default())
}

impl QuadraticSoup {
    pub fn with_options(
        m: usize,
        dim: usize,
        centers: Vec<Vec<f64>>,
        noise_scale: f64,
        options: QuadraticSoupOptions,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("quadratic soup needs at least one objective".into()));
        }
        if centers.len() != m {
            return Err(Error::Config(format!(
                "expected {m} centers, got {}",
                centers.len()
            )));
        }
        for c in &centers {
            if c.len() != dim {
                return Err(Error::Config("center dimension mismatch".into()));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("center".into()));
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if centers[i] == centers[j] {
                    return Err(Error::Config(format!("duplicate centers {i} and {j}")));
                }
            }
        }
        let scales = options.scales.unwrap_or_else(|| vec![1.0; m]);
        if scales.len() != m || scales.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config("scales must be positive, one per objective".into()));
        }
        let init = options.init.unwrap_or_else(|| vec![0.0; dim]);
        if init.len() != dim {
            return Err(Error::Config("init dimension mismatch".into()));
        }
        let samples = if noise_scale > 0.0 {
            (options.samples.max(2) + 1) & !1 // at least 2, even
        } else {
            0
        };
        let mut offsets = Vec::with_capacity(m);
        for obj in 0..m {
            let mut rng = stream_rng(options.seed, "data", obj as u64);
            let mut per_obj = Vec::with_capacity(samples);
            for _ in 0..samples / 2 {
                let o: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                per_obj.push(o.iter().map(|x| -x).collect());
                per_obj.push(o);
            }
            offsets.push(per_obj);
        }

        let known_pareto = Some(match m {
            1 => ParetoSet::Point(centers[0].clone()),
            2 => ParetoSet::Segment { a: centers[0].clone(), b: centers[1].clone() },
            _ => ParetoSet::Hull(centers.clone()),
        });
        let objectives: Vec<ObjectiveId> = (0..m).map(supervised).collect();
        let heads = objectives
            .iter()
            .map(|o| (o.head_block().unwrap(), 0))
            .collect();
        let spec = ProblemSpec {
            name: "quadratic_soup".into(),
            backbone_blocks: vec![(BlockId::Backbone(0), dim)],
            heads,
            objectives,
            has_unsupervised: false,
            known_pareto,
            unsup_optimum: None,
        };
        Ok(QuadraticSoup { spec, centers, scales, noise_scale, offsets, init })
    }

    fn objective_index(&self, id: &ObjectiveId) -> Option<usize> {
        self.spec.objectives.iter().position(|o| o == id)
    }
}

impl Problem for QuadraticSoup {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn initial_params(&self, _seed: u64) -> ParamVector {
        let mut blocks = BTreeMap::new();
        blocks.insert(BlockId::Backbone(0), self.init.clone());
        for (head, dim) in &self.spec.heads {
            blocks.insert(*head, vec![0.0; *dim]);
        }
        ParamVector::new(blocks)
    }

    fn evaluate(&self, params: &ParamVector, batch: &BatchSelection) -> Result<ObjectiveEval> {
        let theta = params
            .block(&BlockId::Backbone(0))
            .ok_or_else(|| Error::StructureMismatch("missing backbone block".into()))?;
        let mut losses = BTreeMap::new();
        let mut cols = BTreeMap::new();
        let mut head_grads = BTreeMap::new();
        for (id, sample) in &batch.labeled {
            let m = self
                .objective_index(id)
                .ok_or_else(|| Error::Config(format!("unknown objective {id}")))?;
            let diff: Vec<f64> = theta.iter().zip(&self.centers[m]).map(|(t, c)| t - c).collect();
            let sq: f64 = diff.iter().map(|x| x * x).sum();
            let base_loss = 0.5 * self.scales[m] * sq;
            let mut grad: Vec<f64> = diff.iter().map(|x| self.scales[m] * x).collect();
            let mut loss = base_loss;
            if self.noise_scale > 0.0 {
                let n = sample.indices.len().max(1) as f64;
                let mut mean_offset = vec![0.0; theta.len()];
                for &j in &sample.indices {
                    let o = self.offsets[m]
                        .get(j)
                        .ok_or_else(|| Error::Config(format!("sample index {j} out of range")))?;
                    for (acc, x) in mean_offset.iter_mut().zip(o) {
                        *acc += x;
                    }
                }
                for x in &mut mean_offset {
                    *x /= n;
                }
                loss += self.noise_scale
                    * mean_offset.iter().zip(theta).map(|(o, t)| o * t).sum::<f64>();
                for (g, o) in grad.iter_mut().zip(&mean_offset) {
                    *g += self.noise_scale * o;
                }
            }
            losses.insert(*id, loss);
            let mut blocks = BTreeMap::new();
            blocks.insert(BlockId::Backbone(0), grad);
            cols.insert(*id, ParamVector::new(blocks));
            head_grads.insert(*id, Vec::new());
        }
        eval_from_parts(&self.spec, batch, losses, cols, head_grads)
    }

    fn labeled_size(&self, id: &ObjectiveId) -> usize {
        match self.objective_index(id) {
            Some(m) if self.noise_scale > 0.0 => self.offsets[m].len(),
            _ => 1,
        }
    }

    fn unlabeled_size(&self) -> usize {
        0
    }

    fn is_stochastic(&self) -> bool {
        self.noise_scale > 0.0
    }
}

/// Two objectives whose gradients are exact negatives on the planted blocks
/// and exactly identical elsewhere, for every parameter value; built from
/// block-separable quadratics.
#[derive(Debug, Clone)]
pub struct ConflictByConstruction {
    spec: ProblemSpec,
    centers: Vec<Vec<f64>>,
    planted: BTreeSet<usize>,
}

pub fn conflict_by_construction(
    planted: &BTreeSet<usize>,
    dims: &[usize],
    seed: u64,
) -> Result<ConflictByConstruction> {
    if planted.is_empty() {
        return Err(Error::Config("planted conflict set is empty".into()));
    }
    if dims.is_empty() {
        return Err(Error::Config("no backbone blocks".into()));
    }
    if let Some(&bad) = planted.iter().find(|b| **b >= dims.len()) {
        return Err(Error::Config(format!(
            "planted block {bad} outside declared blocks 0..{}",
            dims.len()
        )));
    }
    let mut centers = Vec::with_capacity(dims.len());
    for (b, dim) in dims.iter().enumerate() {
        let mut rng = stream_rng(seed, "data", b as u64);
        // Keep centers away from the origin so gradients at the zero init
        // never degenerate.
        let c: Vec<f64> = (0..*dim)
            .map(|_| {
                let x: f64 = rng.random::<f64>() * 2.0 - 1.0;
                x + x.signum() * 0.25
            })
            .collect();
        centers.push(c);
    }
    let objectives = vec![supervised(0), supervised(1)];
    let heads = objectives
        .iter()
        .map(|o| (o.head_block().unwrap(), 0))
        .collect();
    let spec = ProblemSpec {
        name: "conflict_planted".into(),
        backbone_blocks: dims
            .iter()
            .enumerate()
            .map(|(b, d)| (BlockId::Backbone(b), *d))
            .collect(),
        heads,
        objectives,
        has_unsupervised: false,
        known_pareto: None,
        unsup_optimum: None,
    };
    Ok(ConflictByConstruction { spec, centers, planted: planted.clone() })
}

impl Problem for ConflictByConstruction {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn initial_params(&self, _seed: u64) -> ParamVector {
        let mut blocks: BTreeMap<BlockId, Vec<f64>> = self
            .spec
            .backbone_blocks
            .iter()
            .map(|(id, dim)| (*id, vec![0.0; *dim]))
            .collect();
        for (head, dim) in &self.spec.heads {
            blocks.insert(*head, vec![0.0; *dim]);
        }
        ParamVector::new(blocks)
    }

    fn evaluate(&self, params: &ParamVector, batch: &BatchSelection) -> Result<ObjectiveEval> {
        let mut losses = BTreeMap::new();
        let mut cols = BTreeMap::new();
        let mut head_grads = BTreeMap::new();
        for id in batch.labeled.keys() {
            let obj = self
                .spec
                .objectives
                .iter()
                .position(|o| o == id)
                .ok_or_else(|| Error::Config(format!("unknown objective {id}")))?;
            let mut loss = 0.0;
            let mut blocks = BTreeMap::new();
            for (b, (block_id, _)) in self.spec.backbone_blocks.iter().enumerate() {
                let theta = params
                    .block(block_id)
                    .ok_or_else(|| Error::StructureMismatch(format!("missing {block_id}")))?;
                let diff: Vec<f64> = theta.iter().zip(&self.centers[b]).map(|(t, c)| t - c).collect();
                let sq: f64 = diff.iter().map(|x| x * x).sum();
                let sign = if obj == 1 && self.planted.contains(&b) { -1.0 } else { 1.0 };
                loss += sign * 0.5 * sq;
                blocks.insert(*block_id, diff.iter().map(|x| sign * x).collect());
            }
            losses.insert(*id, loss);
            cols.insert(*id, ParamVector::new(blocks));
            head_grads.insert(*id, Vec::new());
        }
        eval_from_parts(&self.spec, batch, losses, cols, head_grads)
    }

    fn labeled_size(&self, _id: &ObjectiveId) -> usize {
        1
    }

    fn unlabeled_size(&self) -> usize {
        0
    }

    fn is_stochastic(&self) -> bool {
        false
    }
}

/// Backbone-neutral quadratics: every objective is a quadratic in its own
/// head only, so the backbone never moves under any recipe. Used to isolate
/// the head-privacy contract.
#[derive(Debug, Clone)]
pub struct HeadQuadratics {
    spec: ProblemSpec,
    targets: BTreeMap<ObjectiveId, Vec<f64>>,
}

pub fn head_quadratics(
    languages: usize,
    tasks: usize,
    head_dim: usize,
    seed: u64,
) -> Result<HeadQuadratics> {
    head_quadratics_with_overrides(languages, tasks, head_dim, seed, &BTreeMap::new())
}

/// Same construction, with per-objective data-seed overrides so a single
/// objective's dataset can be perturbed while all others stay identical.
pub fn head_quadratics_with_overrides(
    languages: usize,
    tasks: usize,
    head_dim: usize,
    seed: u64,
    overrides: &BTreeMap<ObjectiveId, u64>,
) -> Result<HeadQuadratics> {
    if languages == 0 || tasks == 0 || head_dim == 0 {
        return Err(Error::Config("head quadratics need T, N, dim >= 1".into()));
    }
    let mut objectives = Vec::new();
    for t in 0..languages {
        for n in 0..tasks {
            objectives.push(ObjectiveId::Supervised { language: t, task: n });
        }
    }
    let mut targets = BTreeMap::new();
    for (idx, id) in objectives.iter().enumerate() {
        let data_seed = overrides.get(id).copied().unwrap_or(seed);
        let mut rng = stream_rng(data_seed, "data", idx as u64);
        let target: Vec<f64> = (0..head_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        targets.insert(*id, target);
    }
    let heads = objectives
        .iter()
        .map(|o| (o.head_block().unwrap(), head_dim))
        .collect();
    let spec = ProblemSpec {
        name: "head_quadratics".into(),
        backbone_blocks: vec![(BlockId::Backbone(0), 2)],
        heads,
        objectives,
        has_unsupervised: false,
        known_pareto: None,
        unsup_optimum: None,
    };
    Ok(HeadQuadratics { spec, targets })
}

impl Problem for HeadQuadratics {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn initial_params(&self, _seed: u64) -> ParamVector {
        let mut blocks = BTreeMap::new();
        blocks.insert(BlockId::Backbone(0), vec![0.0; 2]);
        for (head, dim) in &self.spec.heads {
            blocks.insert(*head, vec![0.0; *dim]);
        }
        ParamVector::new(blocks)
    }

    fn evaluate(&self, params: &ParamVector, batch: &BatchSelection) -> Result<ObjectiveEval> {
        let mut losses = BTreeMap::new();
        let mut cols = BTreeMap::new();
        let mut head_grads = BTreeMap::new();
        for id in batch.labeled.keys() {
            let target = self
                .targets
                .get(id)
                .ok_or_else(|| Error::Config(format!("unknown objective {id}")))?;
            let head_block = id.head_block().expect("supervised objectives only");
            let phi = params
                .block(&head_block)
                .ok_or_else(|| Error::StructureMismatch(format!("missing {head_block}")))?;
            let diff: Vec<f64> = phi.iter().zip(target).map(|(p, t)| p - t).collect();
            losses.insert(*id, 0.5 * diff.iter().map(|x| x * x).sum::<f64>());
            head_grads.insert(*id, diff);
            // Backbone gradient is identically zero.
            let mut blocks = BTreeMap::new();
            blocks.insert(BlockId::Backbone(0), vec![0.0; 2]);
            cols.insert(*id, ParamVector::new(blocks));
        }
        eval_from_parts(&self.spec, batch, losses, cols, head_grads)
    }

    fn labeled_size(&self, _id: &ObjectiveId) -> usize {
        1
    }

    fn unlabeled_size(&self) -> usize {
        0
    }

    fn is_stochastic(&self) -> bool {
        false
    }
}
