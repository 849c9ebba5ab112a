//! Gradient-conflict measurement and conflicting-layer detection.
//!
//! Two objectives conflict when the cosine similarity of their gradients is
//! strictly negative. Per-layer analysis runs the same test restricted to one
//! backbone block at a time, on gradients averaged over a warmup window; the
//! layers that host at least one conflicting pair form the restriction set
//! used by the efficient weighting path.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::param_space::{inner, BlockId, GradientMatrix, ObjectiveId, ParamVector};

/// Norms below this are treated as degenerate (dead) gradients.
pub const DEGENERACY_EPS: f64 = 1e-15;

/// Cosine similarity plus a degeneracy flag for near-zero gradients.
///
/// Degenerate pairs report a cosine of zero, so dead layers never register
/// as conflicting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine similarity of two gradients over filtered blocks.
pub fn cosine(
    g_i: &ParamVector,
    g_j: &ParamVector,
    filter: Option<&BTreeSet<BlockId>>,
) -> Result<Cosine> {
    let dot = inner(g_i, g_j, filter)?;
    let ni = g_i.norm(filter);
    let nj = g_j.norm(filter);
    if ni < DEGENERACY_EPS || nj < DEGENERACY_EPS {
        return Ok(Cosine { value: 0.0, degenerate: true });
    }
    Ok(Cosine {
        value: dot / (ni * nj),
        degenerate: false,
    })
}

/// Pairwise cosine matrix of `grads`; symmetric with unit diagonal
/// (up to roundoff, and up to degenerate zero entries for dead gradients).
pub fn pairwise_matrix(
    grads: &[ParamVector],
    filter: Option<&BTreeSet<BlockId>>,
) -> Result<SquareMatrix> {
    if grads.len() < 2 {
        return Err(Error::EmptyInput(
            "pairwise cosine matrix needs at least 2 gradients".into(),
        ));
    }
    let m = grads.len();
    let mut out = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in i..m {
            let c = cosine(&grads[i], &grads[j], filter)?.value;
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    Ok(out)
}

/// Which rule marks a layer as conflicting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionMode {
    /// A layer conflicts iff its set of negative-cosine pairs is nonempty and
    /// the average cosine over those pairs is negative.
    NegativePairs,
    /// A layer conflicts iff the average cosine over all pairs falls below
    /// `tau`.
    AllPairsAverage { tau: f64 },
}

impl Default for DetectionMode {
    fn default() -> Self {
        DetectionMode::NegativePairs
    }
}

/// Running per-objective gradient sums over a warmup window of epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientAccumulator {
    objectives: Vec<ObjectiveId>,
    sums: Vec<ParamVector>,
    counts: Vec<u64>,
    epochs_observed: usize,
}

impl GradientAccumulator {
    /// `template` fixes the backbone block structure of every column.
    pub fn new(objectives: Vec<ObjectiveId>, template: &ParamVector) -> Self {
        let zero = template.backbone_only().zeros_like();
        let n = objectives.len();
        GradientAccumulator {
            objectives,
            sums: vec![zero; n],
            counts: vec![0; n],
            epochs_observed: 0,
        }
    }

    pub fn objectives(&self) -> &[ObjectiveId] {
        &self.objectives
    }

    pub fn epochs_observed(&self) -> usize {
        self.epochs_observed
    }

    pub fn has_data(&self) -> bool {
        self.counts.iter().all(|c| *c > 0) && self.epochs_observed > 0
    }

    /// Add one stochastic gradient sample per objective.
    pub fn record(&mut self, grads: &GradientMatrix) -> Result<()> {
        for (idx, id) in self.objectives.iter().enumerate() {
            let column = grads
                .column_for(id)
                .ok_or_else(|| Error::MissingData(format!("gradient for objective {id}")))?;
            self.sums[idx].add_scaled_blocks(1.0, column)?;
            self.counts[idx] += 1;
        }
        Ok(())
    }

    pub fn complete_epoch(&mut self) {
        self.epochs_observed += 1;
    }

    /// Mean gradient for objective `idx`.
    pub fn mean(&self, idx: usize) -> Result<ParamVector> {
        if self.counts[idx] == 0 {
            return Err(Error::EmptyInput(format!(
                "no gradients recorded for objective {}",
                self.objectives[idx]
            )));
        }
        let mut out = self.sums[idx].zeros_like();
        out.add_scaled_blocks(1.0 / self.counts[idx] as f64, &self.sums[idx])?;
        Ok(out)
    }

    pub fn layer_ids(&self) -> BTreeSet<BlockId> {
        self.sums
            .first()
            .map(|s| s.backbone_ids())
            .unwrap_or_default()
    }
}

/// Per-layer conflict analysis of an accumulated gradient window.
#[derive(Debug, Clone)]
pub struct ConflictReport {
    pub objective_ids: Vec<ObjectiveId>,
    pub global_cosine: SquareMatrix,
    pub per_layer_cosine: BTreeMap<BlockId, SquareMatrix>,
    /// Negative-cosine pairs `(i, j)` with `i < j`, per layer.
    pub conflicting_pairs: BTreeMap<BlockId, BTreeSet<(usize, usize)>>,
    pub conflicting_layers: BTreeSet<BlockId>,
    pub epochs_observed: usize,
    pub mode: DetectionMode,
}

/// Apply the detection rule to the mean gradients of `acc`.
pub fn detect_conflicting_layers(
    acc: &GradientAccumulator,
    mode: DetectionMode,
) -> Result<ConflictReport> {
    if !acc.has_data() {
        return Err(Error::EmptyInput(
            "gradient accumulator has no completed epoch".into(),
        ));
    }
    let m = acc.objectives().len();
    if m < 2 {
        return Err(Error::EmptyInput(
            "conflict detection needs at least 2 objectives".into(),
        ));
    }
    let means: Vec<ParamVector> = (0..m).map(|i| acc.mean(i)).collect::<Result<_>>()?;
    let global_cosine = pairwise_matrix(&means, None)?;

    let mut per_layer_cosine = BTreeMap::new();
    let mut conflicting_pairs = BTreeMap::new();
    let mut conflicting_layers = BTreeSet::new();
    for layer in acc.layer_ids() {
        let filter: BTreeSet<BlockId> = [layer].into_iter().collect();
        let matrix = pairwise_matrix(&means, Some(&filter))?;
        let mut pairs = BTreeSet::new();
        let mut negative_sum = 0.0;
        let mut all_sum = 0.0;
        let mut all_count = 0usize;
        for i in 0..m {
            for j in (i + 1)..m {
                let c = matrix.get(i, j);
                all_sum += c;
                all_count += 1;
                if c < 0.0 {
                    pairs.insert((i, j));
                    negative_sum += c;
                }
            }
        }
        let conflicting = match mode {
            DetectionMode::NegativePairs => {
                !pairs.is_empty() && negative_sum / (pairs.len() as f64) < 0.0
            }
            DetectionMode::AllPairsAverage { tau } => all_sum / (all_count as f64) < tau,
        };
        if conflicting {
            conflicting_layers.insert(layer);
        }
        per_layer_cosine.insert(layer, matrix);
        conflicting_pairs.insert(layer, pairs);
    }

    Ok(ConflictReport {
        objective_ids: acc.objectives().to_vec(),
        global_cosine,
        per_layer_cosine,
        conflicting_pairs,
        conflicting_layers,
        epochs_observed: acc.epochs_observed(),
        mode,
    })
}

impl ConflictReport {
    /// CSV rows `layer,obj_i,obj_j,cosine,conflicting`, all ordered pairs.
    /// Global rows use layer id `global`; per-layer rows are optional.
    pub fn write_csv<W: Write>(&self, mut w: W, per_layer: bool) -> Result<()> {
        writeln!(w, "layer,obj_i,obj_j,cosine,conflicting")?;
        let m = self.objective_ids.len();
        let emit = |w: &mut W, layer: &str, matrix: &SquareMatrix| -> Result<()> {
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let c = matrix.get(i, j);
                    writeln!(
                        w,
                        "{layer},{},{},{},{}",
                        self.objective_ids[i],
                        self.objective_ids[j],
                        c,
                        c < 0.0
                    )?;
                }
            }
            Ok(())
        };
        emit(&mut w, "global", &self.global_cosine)?;
        if per_layer {
            for (layer, matrix) in &self.per_layer_cosine {
                emit(&mut w, &layer.to_string(), matrix)?;
            }
        }
        Ok(())
    }

    /// JSON document mirroring the report.
    pub fn to_json(&self) -> serde_json::Value {
        let per_layer: BTreeMap<String, serde_json::Value> = self
            .per_layer_cosine
            .iter()
            .map(|(layer, matrix)| {
                let pairs: Vec<[usize; 2]> = self.conflicting_pairs[layer]
                    .iter()
                    .map(|(i, j)| [*i, *j])
                    .collect();
                (
                    layer.to_string(),
                    json!({
                        "cosine": matrix.to_rows(),
                        "conflicting_pairs": pairs,
                        "conflicting": self.conflicting_layers.contains(layer),
                    }),
                )
            })
            .collect();
        json!({
            "objective_ids": self.objective_ids.iter().map(|o| o.to_string()).collect::<Vec<_>>(),
            "epochs_observed": self.epochs_observed,
            "mode": self.mode,
            "global_cosine": self.global_cosine.to_rows(),
            "per_layer": per_layer,
            "conflicting_layers": self.conflicting_layers.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        })
    }

    pub fn conflicting_layer_names(&self) -> Vec<String> {
        self.conflicting_layers.iter().map(|l| l.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn b(i: usize) -> BlockId {
        BlockId::Backbone(i)
    }

    fn pv(entries: &[(BlockId, Vec<f64>)]) -> ParamVector {
        ParamVector::new(entries.iter().cloned().collect())
    }

    fn sup(i: usize) -> ObjectiveId {
        ObjectiveId::Supervised { language: i, task: 0 }
    }

    #[test]
    fn cosine_sign_cases() {
        let g = pv(&[(b(0), vec![1.0, 2.0])]);
        let neg = pv(&[(b(0), vec![-1.0, -2.0])]);
        assert!((cosine(&g, &neg, None).unwrap().value + 1.0).abs() < 1e-12);
        assert!((cosine(&g, &g, None).unwrap().value - 1.0).abs() < 1e-12);
        let e1 = pv(&[(b(0), vec![1.0, 0.0])]);
        let e2 = pv(&[(b(0), vec![0.0, 1.0])]);
        // Orthogonal gradients are not a conflict: the test is strictly < 0.
        assert_eq!(cosine(&e1, &e2, None).unwrap().value, 0.0);
    }

    #[test]
    fn cosine_degenerate_flag() {
        let g = pv(&[(b(0), vec![1.0])]);
        let zero = pv(&[(b(0), vec![0.0])]);
        let c = cosine(&g, &zero, None).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.degenerate);
    }

    #[test]
    fn cosine_scale_invariance_and_antisymmetry() {
        let mut rng = crate::rng::stream_rng(5, "cos", 0);
        for _ in 0..200 {
            let gi = pv(&[(b(0), (0..3).map(|_| rng.random::<f64>() - 0.5).collect())]);
            let gj = pv(&[(b(0), (0..3).map(|_| rng.random::<f64>() - 0.5).collect())]);
            let c = cosine(&gi, &gj, None).unwrap().value;
            let scale: f64 = rng.random::<f64>() * 10.0 + 0.1;
            let scaled = pv(&[(
                b(0),
                gi.block(&b(0)).unwrap().iter().map(|x| x * scale).collect(),
            )]);
            assert!((cosine(&scaled, &gj, None).unwrap().value - c).abs() < 1e-12);
            let negated = pv(&[(
                b(0),
                gi.block(&b(0)).unwrap().iter().map(|x| -x).collect(),
            )]);
            assert!((cosine(&negated, &gj, None).unwrap().value + c).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_matrix_cases() {
        let g = pv(&[(b(0), vec![2.0, 1.0])]);
        let neg = pv(&[(b(0), vec![-2.0, -1.0])]);
        let m = pairwise_matrix(&[g.clone(), neg], None).unwrap();
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((m.get(0, 1) + 1.0).abs() < 1e-12);
        assert!((m.get(1, 0) + 1.0).abs() < 1e-12);

        let all_same = pairwise_matrix(&[g.clone(), g.clone(), g.clone()], None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((all_same.get(i, j) - 1.0).abs() < 1e-12);
            }
        }

        let a = pv(&[(b(0), vec![1.0, 0.0])]);
        let c = pv(&[(b(0), vec![1.0, 1.0])]);
        let m2 = pairwise_matrix(&[a, c], None).unwrap();
        // Hand cosine oracle: dot 1, norms 1 and sqrt(2).
        assert!((m2.get(0, 1) - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);

        assert!(pairwise_matrix(&[g], None).is_err());
    }

    fn accumulate_epochs(
        grads_per_epoch: &[Vec<ParamVector>],
        objectives: &[ObjectiveId],
    ) -> GradientAccumulator {
        let template = grads_per_epoch[0][0].clone();
        let mut acc = GradientAccumulator::new(objectives.to_vec(), &template);
        for epoch in grads_per_epoch {
            let gm = GradientMatrix::new(
                objectives.iter().cloned().zip(epoch.iter().cloned()).collect(),
            )
            .unwrap();
            acc.record(&gm).unwrap();
            acc.complete_epoch();
        }
        acc
    }

    #[test]
    fn detect_flags_only_the_conflicting_layer() {
        // Layer A: opposed gradients. Layer B: identical gradients.
        let g1 = pv(&[(b(0), vec![1.0, 0.0]), (b(1), vec![1.0, 0.0])]);
        let g2 = pv(&[(b(0), vec![-1.0, 0.0]), (b(1), vec![1.0, 0.0])]);
        let acc = accumulate_epochs(&[vec![g1, g2]], &[sup(0), sup(1)]);
        let report = detect_conflicting_layers(&acc, DetectionMode::NegativePairs).unwrap();
        assert_eq!(
            report.conflicting_layers,
            [b(0)].into_iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(report.conflicting_pairs[&b(0)].len(), 1);
        assert!(report.conflicting_pairs[&b(1)].is_empty());
    }

    #[test]
    fn detect_no_conflicts_when_gradients_identical() {
        let g = pv(&[(b(0), vec![1.0]), (b(1), vec![2.0])]);
        let acc = accumulate_epochs(&[vec![g.clone(), g.clone(), g]], &[sup(0), sup(1), sup(2)]);
        let report = detect_conflicting_layers(&acc, DetectionMode::NegativePairs).unwrap();
        assert!(report.conflicting_layers.is_empty());
    }

    #[test]
    fn detect_single_negative_pair_flags_layer() {
        // Three objectives on one layer; pairwise cosines (-0.5, +0.9, +0.9)-ish:
        // enumerate pairs and apply the literal rule -- one negative pair is
        // enough, its average is that negative value.
        let a = pv(&[(b(0), vec![1.0, 0.0])]);
        let c = pv(&[(b(0), vec![-0.5, (1.0f64 - 0.25).sqrt()])]); // cos(a, c) = -0.5
        let d = pv(&[(b(0), vec![0.4, 0.9])]);
        let acc = accumulate_epochs(&[vec![a, c, d]], &[sup(0), sup(1), sup(2)]);
        let report = detect_conflicting_layers(&acc, DetectionMode::NegativePairs).unwrap();
        assert_eq!(
            report.conflicting_layers,
            [b(0)].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn detect_is_invariant_to_epoch_order() {
        let mut rng = crate::rng::stream_rng(9, "order", 0);
        let epochs: Vec<Vec<ParamVector>> = (0..5)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        pv(&[
                            (b(0), (0..3).map(|_| rng.random::<f64>() - 0.5).collect()),
                            (b(1), (0..3).map(|_| rng.random::<f64>() - 0.5).collect()),
                        ])
                    })
                    .collect()
            })
            .collect();
        let objectives = [sup(0), sup(1)];
        let forward = accumulate_epochs(&epochs, &objectives);
        let reversed: Vec<_> = epochs.iter().rev().cloned().collect();
        let backward = accumulate_epochs(&reversed, &objectives);
        let ra = detect_conflicting_layers(&forward, DetectionMode::NegativePairs).unwrap();
        let rb = detect_conflicting_layers(&backward, DetectionMode::NegativePairs).unwrap();
        assert_eq!(ra.conflicting_layers, rb.conflicting_layers);
        for layer in [b(0), b(1)] {
            let ma = &ra.per_layer_cosine[&layer];
            let mb = &rb.per_layer_cosine[&layer];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((ma.get(i, j) - mb.get(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn threshold_mode_uses_all_pairs_average() {
        // One mildly negative pair among strongly positive ones: literal rule
        // flags the layer, the all-pairs average (tau = 0) does not.
        let a = pv(&[(b(0), vec![1.0, 0.0])]);
        let c = pv(&[(b(0), vec![-0.1, (1.0f64 - 0.01).sqrt()])]);
        let d = pv(&[(b(0), vec![0.7, 0.7])]);
        let acc = accumulate_epochs(&[vec![a, c, d]], &[sup(0), sup(1), sup(2)]);
        let literal = detect_conflicting_layers(&acc, DetectionMode::NegativePairs).unwrap();
        assert!(literal.conflicting_layers.contains(&b(0)));
        let averaged =
            detect_conflicting_layers(&acc, DetectionMode::AllPairsAverage { tau: 0.0 }).unwrap();
        assert!(averaged.conflicting_layers.is_empty());
    }

    #[test]
    fn dead_layer_never_conflicts() {
        let g1 = pv(&[(b(0), vec![0.0, 0.0]), (b(1), vec![1.0])]);
        let g2 = pv(&[(b(0), vec![0.0, 0.0]), (b(1), vec![1.0])]);
        let acc = accumulate_epochs(&[vec![g1, g2]], &[sup(0), sup(1)]);
        let report = detect_conflicting_layers(&acc, DetectionMode::NegativePairs).unwrap();
        assert!(report.conflicting_layers.is_empty());
    }

    #[test]
    fn report_csv_and_json_shapes() {
        let g1 = pv(&[(b(0), vec![1.0]), (b(1), vec![1.0])]);
        let g2 = pv(&[(b(0), vec![-1.0]), (b(1), vec![1.0])]);
        let acc = accumulate_epochs(&[vec![g1, g2]], &[sup(0), sup(1)]);
        let report = detect_conflicting_layers(&acc, DetectionMode::NegativePairs).unwrap();

        let mut csv = Vec::new();
        report.write_csv(&mut csv, true).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "layer,obj_i,obj_j,cosine,conflicting");
        // header + (global + 2 layers) x 2 ordered pairs
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(lines.iter().any(|l| l.starts_with("backbone_0,t0_n0,t1_n0,-1,")));

        let doc = report.to_json();
        assert_eq!(doc["epochs_observed"], 1);
        assert_eq!(doc["conflicting_layers"][0], "backbone_0");
        let round: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(round, doc);
    }

    #[test]
    fn empty_accumulator_is_an_error() {
        let template = pv(&[(b(0), vec![0.0])]);
        let acc = GradientAccumulator::new(vec![sup(0), sup(1)], &template);
        assert!(detect_conflicting_layers(&acc, DetectionMode::NegativePairs).is_err());
    }
}
