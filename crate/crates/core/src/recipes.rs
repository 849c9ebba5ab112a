//! Training recipes: flat (vs), constrained bilevel (vc), multilevel (vm),
//! and the two-stage / static-weight / joint baselines.
//!
//! One iteration samples two independent labeled batches (plus unlabeled
//! samples when a self-supervised objective exists), evaluates losses and
//! gradients at the current parameters, updates the backbone with the weights
//! carried into the iteration, updates every head with its own gradient, and
//! then advances the per-level weights by one projected Gram step. Penalty
//! values are recomputed exactly once per epoch boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conflict::{
    detect_conflicting_layers, ConflictReport, DetectionMode, GradientAccumulator,
};
use crate::error::{Error, Result};
use crate::param_space::{combine, BlockId, ObjectiveId, ParamVector};
use crate::problems::{sample_batches, BatchSelection, ObjectiveEval, Problem};
use crate::simplex::SimplexWeights;
use crate::trace::{FinalRecord, RunTrace, TraceRecord};
use crate::weighting::{GammaSchedule, WeightState};

/// Epoch-indexed penalty coefficient: ramped linearly and capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySchedule {
    pub init: f64,
    pub rate_per_epoch: f64,
    pub cap: f64,
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.init.is_finite() && self.rate_per_epoch.is_finite() && self.cap.is_finite()) {
            return Err(Error::Config("penalty schedule values must be finite".into()));
        }
        if self.init < 0.0 || self.rate_per_epoch < 0.0 {
            return Err(Error::Config(
                "penalty init and rate must be nonnegative".into(),
            ));
        }
        if self.cap < self.init {
            return Err(Error::Config("penalty cap must be at least init".into()));
        }
        Ok(())
    }

    /// `min(init + rate * epoch, cap)`.
    pub fn value(&self, epoch: usize) -> f64 {
        (self.init + self.rate_per_epoch * epoch as f64).min(self.cap)
    }

    pub fn zero() -> Self {
        PenaltySchedule { init: 0.0, rate_per_epoch: 0.0, cap: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    /// All objectives in one simplex, self-supervised included.
    Vs,
    /// Supervised simplex with the self-supervised loss as a ramped penalty.
    Vc,
    /// One simplex per level; deeper levels enter through penalties.
    Vm,
    /// Pretrain on the self-supervised loss, then uniformly averaged
    /// fine-tuning.
    TwoStage,
    /// Fixed weights over supervised objectives.
    StaticWeight,
    /// Uniform fixed weights plus the self-supervised penalty (no dynamic
    /// weighting).
    Joint,
}

impl RecipeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecipeKind::Vs => "vs",
            RecipeKind::Vc => "vc",
            RecipeKind::Vm => "vm",
            RecipeKind::TwoStage => "two_stage",
            RecipeKind::StaticWeight => "static_weight",
            RecipeKind::Joint => "joint",
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, RecipeKind::Vs | RecipeKind::Vc | RecipeKind::Vm)
    }
}

/// Full recipe description: level assignment, penalties, and learning rates.
#[derive(Debug, Clone)]
pub struct RecipeConfig {
    pub kind: RecipeKind,
    /// Supervised objectives per level, level 1 (uppermost) first. The
    /// self-supervised objective never appears here: it joins the level-1
    /// simplex for `vs` and enters through its penalty otherwise, always at
    /// the lowest level.
    pub levels: Vec<Vec<ObjectiveId>>,
    /// Free ordering tag (e.g. "UAS", "USA"); pure metadata over `levels`.
    pub order_label: String,
    /// Penalty schedules for levels 2..=P.
    pub level_penalties: Vec<PenaltySchedule>,
    /// Penalty schedule of the self-supervised objective (vc, vm, joint).
    pub unsup_penalty: Option<PenaltySchedule>,
    /// Multiply penalties down the hierarchy instead of applying them
    /// independently per level.
    pub nested: bool,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: GammaSchedule,
    pub static_weights: Option<Vec<f64>>,
    /// Constraint level for feasibility reporting; never enforced.
    pub epsilon_track: Option<f64>,
    /// Two-stage only: epochs of self-supervised pretraining.
    pub pretrain_epochs: usize,
}

impl RecipeConfig {
    pub fn flat_supervised(&self) -> Vec<ObjectiveId> {
        self.levels.iter().flatten().copied().collect()
    }

    pub fn validate(&self, problem: &dyn Problem) -> Result<()> {
        let spec = problem.spec();
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if !(self.gamma.base().is_finite() && self.gamma.base() > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| l.is_empty()) {
            return Err(Error::Config("every level must hold at least one objective".into()));
        }
        if self.kind != RecipeKind::Vm && self.levels.len() != 1 {
            return Err(Error::Config(format!(
                "recipe {} uses a single level",
                self.kind.as_str()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in self.flat_supervised() {
            if id == ObjectiveId::Unsupervised {
                return Err(Error::Config(
                    "the self-supervised objective is placed by the recipe kind, not by levels"
                        .into(),
                ));
            }
            if !seen.insert(id) {
                return Err(Error::Config(format!("objective {id} appears in two levels")));
            }
        }
        let expected: BTreeSet<ObjectiveId> = spec.supervised().into_iter().collect();
        if seen != expected {
            return Err(Error::Config(
                "levels must cover every supervised objective exactly once".into(),
            ));
        }
        if self.kind == RecipeKind::Vm {
            if self.level_penalties.len() != self.levels.len() - 1 {
                return Err(Error::Config(format!(
                    "vm with {} levels needs {} level penalties",
                    self.levels.len(),
                    self.levels.len() - 1
                )));
            }
        } else if !self.level_penalties.is_empty() {
            return Err(Error::Config("level penalties apply to vm only".into()));
        }
        for schedule in &self.level_penalties {
            schedule.validate()?;
        }
        if let Some(schedule) = &self.unsup_penalty {
            schedule.validate()?;
        }
        let needs_unsup_penalty = matches!(
            self.kind,
            RecipeKind::Vc | RecipeKind::Vm | RecipeKind::Joint
        ) && spec.has_unsupervised;
        if needs_unsup_penalty && self.unsup_penalty.is_none() {
            return Err(Error::Config(format!(
                "recipe {} on a problem with a self-supervised objective needs an unsup penalty schedule",
                self.kind.as_str()
            )));
        }
        match (&self.kind, &self.static_weights) {
            (RecipeKind::StaticWeight, None) => {
                return Err(Error::Config("static_weight needs static weights".into()))
            }
            (RecipeKind::StaticWeight, Some(w)) => {
                let flat = self.flat_supervised();
                if w.len() != flat.len() {
                    return Err(Error::Config(format!(
                        "{} static weights for {} supervised objectives",
                        w.len(),
                        flat.len()
                    )));
                }
                // SimplexWeights enforces nonnegativity and sum-to-one.
                SimplexWeights::new(w.clone())?;
            }
            (_, Some(_)) => {
                return Err(Error::Config("static weights apply to static_weight only".into()))
            }
            _ => {}
        }
        if self.pretrain_epochs > 0 {
            if self.kind != RecipeKind::TwoStage {
                return Err(Error::Config("pretrain_epochs applies to two_stage only".into()));
            }
            if !spec.has_unsupervised {
                return Err(Error::Config(
                    "two_stage pretraining needs a self-supervised objective".into(),
                ));
            }
        }
        if let Some(eps) = self.epsilon_track {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::Config("epsilon must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub epochs: usize,
    pub iters_per_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub log_every: usize,
    pub efficient_mode: bool,
    pub warmup_epochs: usize,
    pub detection_mode: DetectionMode,
    pub divergence_guard: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 64,
            log_every: 10,
            efficient_mode: false,
            warmup_epochs: 20,
            detection_mode: DetectionMode::NegativePairs,
            divergence_guard: 1e12,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self, budget: &Budget) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if budget.iters_per_epoch == 0 {
            return Err(Error::Config("iters_per_epoch must be positive".into()));
        }
        if self.efficient_mode && self.warmup_epochs == 0 {
            return Err(Error::Config(
                "efficient mode needs at least one warmup epoch".into(),
            ));
        }
        if !(self.divergence_guard.is_finite() && self.divergence_guard > 0.0) {
            return Err(Error::Config("divergence guard must be positive".into()));
        }
        Ok(())
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub params: ParamVector,
    /// One weight state per level for the dynamic recipes; empty otherwise.
    pub weight_states: Vec<WeightState>,
    pub epoch: usize,
    pub iteration: usize,
    pub penalty_values: BTreeMap<String, f64>,
    pub restricted: bool,
    pub conflicting_layers: BTreeSet<BlockId>,
}

pub struct TrainOutput {
    pub state: OptimizerState,
    pub trace: RunTrace,
    pub accumulator: GradientAccumulator,
    pub conflict_report: Option<ConflictReport>,
}

/// Single-owner training state machine. `step` advances one iteration;
/// `run` drives the full budget with trace logging.
pub struct Trainer<'p> {
    problem: &'p dyn Problem,
    recipe: RecipeConfig,
    options: TrainOptions,
    budget: Budget,
    seed: u64,
    state: OptimizerState,
    /// Objectives weighted per level; for `vs` the single level also carries
    /// the self-supervised objective as its last entry.
    level_objectives: Vec<Vec<ObjectiveId>>,
    accumulator: GradientAccumulator,
    conflict_report: Option<ConflictReport>,
    records: Vec<TraceRecord>,
    completed: bool,
    started: Instant,
}

impl<'p> Trainer<'p> {
    pub fn new(
        problem: &'p dyn Problem,
        recipe: RecipeConfig,
        options: TrainOptions,
        budget: Budget,
        seed: u64,
    ) -> Result<Self> {
        recipe.validate(problem)?;
        options.validate(&budget)?;
        let spec = problem.spec();

        let mut level_objectives: Vec<Vec<ObjectiveId>> = recipe.levels.clone();
        if recipe.kind == RecipeKind::Vs && spec.has_unsupervised {
            level_objectives[0].push(ObjectiveId::Unsupervised);
        }
        let weight_states = if recipe.kind.is_dynamic() {
            level_objectives
                .iter()
                .map(|objs| WeightState::new(objs.len(), recipe.gamma))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let params = problem.initial_params(seed);
        if !params.is_finite() {
            return Err(Error::NonFinite("initial parameters".into()));
        }
        let accumulator = GradientAccumulator::new(spec.objectives.clone(), &params);
        let mut trainer = Trainer {
            problem,
            recipe,
            options,
            budget,
            seed,
            state: OptimizerState {
                params,
                weight_states,
                epoch: 0,
                iteration: 0,
                penalty_values: BTreeMap::new(),
                restricted: false,
                conflicting_layers: BTreeSet::new(),
            },
            level_objectives,
            accumulator,
            conflict_report: None,
            records: Vec::new(),
            completed: false,
            started: Instant::now(),
        };
        trainer.refresh_penalties(0);
        trainer.log_record()?;
        Ok(trainer)
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn accumulator(&self) -> &GradientAccumulator {
        &self.accumulator
    }

    pub fn conflict_report(&self) -> Option<&ConflictReport> {
        self.conflict_report.as_ref()
    }

    fn refresh_penalties(&mut self, epoch: usize) {
        let mut values = BTreeMap::new();
        for (idx, schedule) in self.recipe.level_penalties.iter().enumerate() {
            values.insert(format!("level_{}", idx + 2), schedule.value(epoch));
        }
        if self.problem.spec().has_unsupervised {
            if let Some(schedule) = &self.recipe.unsup_penalty {
                if matches!(
                    self.recipe.kind,
                    RecipeKind::Vc | RecipeKind::Vm | RecipeKind::Joint
                ) {
                    values.insert("unsup".into(), schedule.value(epoch));
                }
            }
        }
        self.state.penalty_values = values;
    }

    fn phase(&self, epoch: usize) -> Option<String> {
        match self.recipe.kind {
            RecipeKind::TwoStage => Some(if epoch < self.recipe.pretrain_epochs {
                "pretrain".to_string()
            } else {
                "finetune".to_string()
            }),
            _ => None,
        }
    }

    /// Epoch-boundary work: penalty refresh, and after the warmup window the
    /// one-time conflicting-layer detection that freezes the restriction set.
    fn on_epoch_start(&mut self, epoch: usize) -> Result<()> {
        self.state.epoch = epoch;
        self.refresh_penalties(epoch);
        if self.options.efficient_mode
            && self.conflict_report.is_none()
            && epoch >= self.options.warmup_epochs
            && self.accumulator.has_data()
        {
            let report = detect_conflicting_layers(&self.accumulator, self.options.detection_mode)?;
            let restriction = report.conflicting_layers.clone();
            for ws in &mut self.state.weight_states {
                ws.restriction = Some(restriction.clone());
            }
            self.state.restricted = true;
            self.state.conflicting_layers = restriction;
            self.conflict_report = Some(report);
        }
        Ok(())
    }

    /// Effective multiplier of each supervised level in the backbone update.
    fn level_coefficients(&self) -> Vec<f64> {
        let p = self.level_objectives.len();
        let mut coeffs = vec![1.0; p];
        if self.recipe.kind != RecipeKind::Vm {
            return coeffs;
        }
        let mut nested_product = 1.0;
        for level in 1..p {
            let eta = self.state.penalty_values[&format!("level_{}", level + 1)];
            coeffs[level] = if self.recipe.nested {
                nested_product *= eta;
                nested_product
            } else {
                eta
            };
        }
        coeffs
    }

    /// Effective multiplier of the self-supervised gradient.
    fn unsup_coefficient(&self) -> f64 {
        let eta = self.state.penalty_values.get("unsup").copied().unwrap_or(0.0);
        if self.recipe.kind == RecipeKind::Vm && self.recipe.nested {
            let product: f64 = (1..self.level_objectives.len())
                .map(|level| self.state.penalty_values[&format!("level_{}", level + 1)])
                .product();
            product * eta
        } else {
            eta
        }
    }

    fn guard_losses(&self, eval: &ObjectiveEval) -> Result<()> {
        for (id, loss) in &eval.losses {
            if !loss.is_finite() || loss.abs() > self.options.divergence_guard {
                return Err(Error::Numerical(format!(
                    "loss of objective {id} diverged at iteration {}: {loss}",
                    self.state.iteration
                )));
            }
        }
        Ok(())
    }

    /// One full iteration: sample, evaluate, update backbone and heads with
    /// the weights carried into the iteration, then advance the weights.
    pub fn step(&mut self) -> Result<()> {
        let iter = self.state.iteration;
        if iter % self.budget.iters_per_epoch == 0 {
            self.on_epoch_start(iter / self.budget.iters_per_epoch)?;
        }
        let epoch = self.state.epoch;
        let spec = self.problem.spec();
        let batches = sample_batches(self.problem, self.seed, iter as u64, self.options.batch_size);

        let pretraining =
            self.recipe.kind == RecipeKind::TwoStage && epoch < self.recipe.pretrain_epochs;

        // First evaluation: labeled sample one, plus unlabeled when the
        // update consumes a self-supervised gradient.
        let sel1 = if pretraining {
            let zeta = batches.zeta1.clone().ok_or_else(|| {
                Error::Config("two-stage pretraining needs unlabeled data".into())
            })?;
            BatchSelection { labeled: BTreeMap::new(), unlabeled: Some(zeta) }
        } else {
            let mut sel = batches.xi1.clone();
            let uses_unsup = spec.has_unsupervised
                && matches!(
                    self.recipe.kind,
                    RecipeKind::Vs | RecipeKind::Vc | RecipeKind::Vm | RecipeKind::Joint
                );
            if uses_unsup {
                sel = sel.with_unlabeled(batches.zeta1.clone().ok_or_else(|| {
                    Error::Config("missing unlabeled batch".into())
                })?);
            }
            sel
        };
        let e1 = self.problem.evaluate(&self.state.params, &sel1)?;
        self.guard_losses(&e1)?;

        // Second independent sample, evaluated at the same iterate before any
        // update is applied.
        let e2 = if self.recipe.kind.is_dynamic() {
            let mut sel2 = batches.xi2.clone();
            if self.recipe.kind == RecipeKind::Vs && spec.has_unsupervised {
                sel2 = sel2.with_unlabeled(batches.zeta2.clone().ok_or_else(|| {
                    Error::Config("missing second unlabeled batch".into())
                })?);
            }
            Some(self.problem.evaluate(&self.state.params, &sel2)?)
        } else {
            None
        };

        // Warmup accumulation whenever the evaluation covers every objective.
        if epoch < self.options.warmup_epochs && e1.backbone.len() == spec.objectives.len() {
            self.accumulator.record(&e1.backbone)?;
        }

        // Backbone direction with the weights carried into this iteration.
        let lambda_snapshot: Vec<SimplexWeights> = self
            .state
            .weight_states
            .iter()
            .map(|ws| ws.lambda.clone())
            .collect();
        let (direction, rate) = self.backbone_direction(&e1, &lambda_snapshot, pretraining)?;
        self.state.params.add_scaled_blocks(-rate, &direction)?;

        // Head updates: each head sees only its own objective's gradient.
        if !pretraining {
            for id in self.recipe.flat_supervised() {
                let head_block = id.head_block().expect("supervised objectives own heads");
                let grad = e1
                    .head_grads
                    .get(&id)
                    .ok_or_else(|| Error::MissingHeadGradient(id.to_string()))?;
                self.state.params.update_block(&head_block, -self.recipe.beta, grad)?;
            }
        }

        // Weight updates from the two independent samples.
        if let Some(e2) = e2 {
            for (level, objectives) in self.level_objectives.iter().enumerate() {
                let g1 = e1.backbone.subset(objectives)?;
                let g2 = e2.backbone.subset(objectives)?;
                self.state.weight_states[level].modo_step(&g1, &g2)?;
            }
        }

        self.state.iteration += 1;
        if self.state.iteration % self.budget.iters_per_epoch == 0
            && self.state.epoch < self.options.warmup_epochs
        {
            self.accumulator.complete_epoch();
        }
        Ok(())
    }

    fn backbone_direction(
        &self,
        e1: &ObjectiveEval,
        lambdas: &[SimplexWeights],
        pretraining: bool,
    ) -> Result<(ParamVector, f64)> {
        let spec = self.problem.spec();
        match self.recipe.kind {
            RecipeKind::Vs => {
                let g = e1.backbone.subset(&self.level_objectives[0])?;
                Ok((combine(&g, &lambdas[0])?, self.recipe.alpha))
            }
            RecipeKind::Vc | RecipeKind::Vm => {
                let coeffs = self.level_coefficients();
                let mut direction: Option<ParamVector> = None;
                for (level, objectives) in self.level_objectives.iter().enumerate() {
                    let g = e1.backbone.subset(objectives)?;
                    let combined = combine(&g, &lambdas[level])?;
                    match &mut direction {
                        None => {
                            let mut base = combined.zeros_like();
                            base.add_scaled_blocks(coeffs[level], &combined)?;
                            direction = Some(base);
                        }
                        Some(dir) => dir.add_scaled_blocks(coeffs[level], &combined)?,
                    }
                }
                let mut direction = direction.expect("at least one level");
                if spec.has_unsupervised {
                    let unsup = e1
                        .backbone
                        .column_for(&ObjectiveId::Unsupervised)
                        .ok_or_else(|| Error::MissingData("self-supervised gradient".into()))?;
                    direction.add_scaled_blocks(self.unsup_coefficient(), unsup)?;
                }
                Ok((direction, self.recipe.alpha))
            }
            RecipeKind::Joint => {
                let flat = self.recipe.flat_supervised();
                let g = e1.backbone.subset(&flat)?;
                let uniform = SimplexWeights::uniform(flat.len())?;
                let mut direction = combine(&g, &uniform)?;
                if spec.has_unsupervised {
                    let unsup = e1
                        .backbone
                        .column_for(&ObjectiveId::Unsupervised)
                        .ok_or_else(|| Error::MissingData("self-supervised gradient".into()))?;
                    let eta = self.state.penalty_values.get("unsup").copied().unwrap_or(0.0);
                    direction.add_scaled_blocks(eta, unsup)?;
                }
                Ok((direction, self.recipe.alpha))
            }
            RecipeKind::StaticWeight => {
                let flat = self.recipe.flat_supervised();
                let g = e1.backbone.subset(&flat)?;
                let weights = SimplexWeights::new(
                    self.recipe.static_weights.clone().expect("validated"),
                )?;
                Ok((combine(&g, &weights)?, self.recipe.beta))
            }
            RecipeKind::TwoStage => {
                if pretraining {
                    let unsup = e1
                        .backbone
                        .column_for(&ObjectiveId::Unsupervised)
                        .ok_or_else(|| Error::MissingData("self-supervised gradient".into()))?;
                    let mut direction = unsup.zeros_like();
                    direction.add_scaled_blocks(1.0, unsup)?;
                    Ok((direction, self.recipe.alpha))
                } else {
                    // beta/NT times the gradient sum = beta times the mean.
                    let flat = self.recipe.flat_supervised();
                    let g = e1.backbone.subset(&flat)?;
                    let uniform = SimplexWeights::uniform(flat.len())?;
                    Ok((combine(&g, &uniform)?, self.recipe.beta))
                }
            }
        }
    }

    /// Push one full-batch trace record at the current parameters.
    fn log_record(&mut self) -> Result<()> {
        let spec = self.problem.spec();
        let full = BatchSelection::full(self.problem);
        let eval = self.problem.evaluate(&self.state.params, &full)?;
        let stationarity = crate::weighting::stationarity_measure(
            &eval.backbone,
            crate::weighting::DEFAULT_STATIONARITY_TOL,
            crate::weighting::DEFAULT_STATIONARITY_MAX_ITER,
        )?;
        let feasibility_gap = match (spec.has_unsupervised, spec.unsup_optimum) {
            (true, Some(optimum)) => Some(eval.losses[&ObjectiveId::Unsupervised] - optimum),
            _ => None,
        };

        let mut lambda = BTreeMap::new();
        let mut lambda_u = None;
        match self.recipe.kind {
            RecipeKind::Vs => {
                let values = self.state.weight_states[0].lambda.as_slice();
                if spec.has_unsupervised {
                    lambda.insert("level_1".into(), values[..values.len() - 1].to_vec());
                    lambda_u = Some(values[values.len() - 1]);
                } else {
                    lambda.insert("level_1".into(), values.to_vec());
                }
            }
            RecipeKind::Vc | RecipeKind::Vm => {
                for (level, ws) in self.state.weight_states.iter().enumerate() {
                    lambda.insert(format!("level_{}", level + 1), ws.lambda.as_slice().to_vec());
                }
            }
            RecipeKind::StaticWeight => {
                lambda.insert(
                    "level_1".into(),
                    self.recipe.static_weights.clone().expect("validated"),
                );
            }
            RecipeKind::Joint => {
                let flat = self.recipe.flat_supervised();
                lambda.insert("level_1".into(), vec![1.0 / flat.len() as f64; flat.len()]);
            }
            RecipeKind::TwoStage => {
                if self.phase(self.state.epoch).as_deref() == Some("pretrain") {
                    // No supervised weights during pretraining.
                    lambda.insert("level_1".into(), Vec::new());
                } else {
                    let flat = self.recipe.flat_supervised();
                    lambda.insert("level_1".into(), vec![1.0 / flat.len() as f64; flat.len()]);
                }
            }
        }

        let record = TraceRecord {
            iter: self.state.iteration,
            epoch: self.state.epoch,
            recipe: self.recipe.kind.as_str().to_string(),
            order: self.recipe.order_label.clone(),
            lambda,
            lambda_u,
            eta: self.state.penalty_values.clone(),
            losses: eval.losses.iter().map(|(id, l)| (id.to_string(), *l)).collect(),
            stationarity,
            feasibility_gap,
            conflict_layers: self
                .state
                .conflicting_layers
                .iter()
                .map(|l| l.to_string())
                .collect(),
            restricted: self.state.restricted,
            phase: self.phase(self.state.epoch),
        };
        self.records.push(record);
        Ok(())
    }

    /// Drive the full budget, logging every `log_every` iterations and at
    /// epoch boundaries. Epochs complete for the warmup accumulator as the
    /// iteration counter crosses each boundary.
    pub fn run(&mut self) -> Result<()> {
        let total = self.budget.epochs * self.budget.iters_per_epoch;
        while self.state.iteration < total {
            self.step()?;
            let done = self.state.iteration;
            let epoch_end = done % self.budget.iters_per_epoch == 0;
            if done % self.options.log_every == 0 || epoch_end || done == total {
                self.log_record()?;
            }
        }
        self.completed = true;
        Ok(())
    }

    /// Consume the trainer into its outputs. The terminal record is present
    /// only for completed runs; failed runs keep their partial records.
    pub fn finish(self) -> Result<TrainOutput> {
        let final_record = if self.completed {
            let pareto_distance = self
                .problem
                .spec()
                .known_pareto
                .as_ref()
                .map(|_| crate::problems::pareto_distance(self.problem, &self.state.params))
                .transpose()?;
            Some(FinalRecord {
                is_final: true,
                params_hash: self.state.params.content_hash(),
                wallclock_ms: self.started.elapsed().as_secs_f64() * 1e3,
                pareto_distance,
            })
        } else {
            None
        };
        Ok(TrainOutput {
            state: self.state,
            trace: RunTrace { records: self.records, final_record },
            accumulator: self.accumulator,
            conflict_report: self.conflict_report,
        })
    }
}

/// Run a full training loop and return the final state, trace, and conflict
/// data. Bit-reproducible for a fixed seed.
pub fn train(
    problem: &dyn Problem,
    recipe: RecipeConfig,
    options: TrainOptions,
    budget: Budget,
    seed: u64,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(problem, recipe, options, budget, seed)?;
    trainer.run()?;
    trainer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::GradientMatrix;
    use crate::problems::{ObjectiveEval, ProblemSpec};
    use crate::problems::QuadraticSoupOptions;

    fn sup(i: usize) -> ObjectiveId {
        ObjectiveId::Supervised { language: i, task: 0 }
    }

    /// One-dimensional problem: supervised losses `0.5 (theta - c_m)^2` plus
    /// an optional self-supervised loss `0.5 theta^2`; dim-0 heads.
    struct ScalarProblem {
        spec: ProblemSpec,
        centers: Vec<f64>,
        init: f64,
    }

    impl ScalarProblem {
        fn new(centers: Vec<f64>, with_unsup: bool, init: f64) -> Self {
            let mut objectives: Vec<ObjectiveId> = (0..centers.len()).map(sup).collect();
            if with_unsup {
                objectives.push(ObjectiveId::Unsupervised);
            }
            let heads = (0..centers.len())
                .map(|i| (sup(i).head_block().unwrap(), 0))
                .collect();
            let spec = ProblemSpec {
                name: "scalar".into(),
                backbone_blocks: vec![(BlockId::Backbone(0), 1)],
                heads,
                objectives,
                has_unsupervised: with_unsup,
                known_pareto: None,
                unsup_optimum: with_unsup.then_some(0.0),
            };
            ScalarProblem { spec, centers, init }
        }
    }

    impl Problem for ScalarProblem {
        fn spec(&self) -> &ProblemSpec {
            &self.spec
        }

        fn initial_params(&self, _seed: u64) -> ParamVector {
            let mut blocks = BTreeMap::new();
            blocks.insert(BlockId::Backbone(0), vec![self.init]);
            for (head, dim) in &self.spec.heads {
                blocks.insert(*head, vec![0.0; *dim]);
            }
            ParamVector::new(blocks)
        }

        fn evaluate(&self, params: &ParamVector, batch: &BatchSelection) -> Result<ObjectiveEval> {
            let theta = params.block(&BlockId::Backbone(0)).unwrap()[0];
            let mut losses = BTreeMap::new();
            let mut cols = Vec::new();
            let mut head_grads = BTreeMap::new();
            for id in &self.spec.objectives {
                match id {
                    ObjectiveId::Supervised { language, .. } => {
                        if batch.labeled.contains_key(id) {
                            let c = self.centers[*language];
                            losses.insert(*id, 0.5 * (theta - c) * (theta - c));
                            let mut blocks = BTreeMap::new();
                            blocks.insert(BlockId::Backbone(0), vec![theta - c]);
                            cols.push((*id, ParamVector::new(blocks)));
                            head_grads.insert(*id, Vec::new());
                        }
                    }
                    ObjectiveId::Unsupervised => {
                        if batch.unlabeled.is_some() {
                            losses.insert(*id, 0.5 * theta * theta);
                            let mut blocks = BTreeMap::new();
                            blocks.insert(BlockId::Backbone(0), vec![theta]);
                            cols.push((*id, ParamVector::new(blocks)));
                        }
                    }
                }
            }
            Ok(ObjectiveEval {
                losses,
                backbone: GradientMatrix::new(cols)?,
                head_grads,
                samples: batch.clone(),
            })
        }

        fn labeled_size(&self, _id: &ObjectiveId) -> usize {
            1
        }

        fn unlabeled_size(&self) -> usize {
            if self.spec.has_unsupervised { 1 } else { 0 }
        }

        fn is_stochastic(&self) -> bool {
            false
        }
    }

    fn base_recipe(kind: RecipeKind, levels: Vec<Vec<ObjectiveId>>) -> RecipeConfig {
        RecipeConfig {
            kind,
            levels,
            order_label: String::new(),
            level_penalties: Vec::new(),
            unsup_penalty: None,
            nested: false,
            alpha: 0.1,
            beta: 0.1,
            gamma: GammaSchedule::Constant { base: 0.01 },
            static_weights: None,
            epsilon_track: None,
            pretrain_epochs: 0,
        }
    }

    fn theta(state: &OptimizerState) -> f64 {
        state.params.block(&BlockId::Backbone(0)).unwrap()[0]
    }

    #[test]
    fn penalty_schedule_values() {
        let s = PenaltySchedule { init: 0.0, rate_per_epoch: 0.02, cap: 1.5 };
        assert_eq!(s.value(0), 0.0);
        assert_eq!(s.value(10), 0.2);
        assert_eq!(s.value(100), 1.5);
        let mut last = -1.0;
        for epoch in 0..200 {
            let v = s.value(epoch);
            assert!(v >= last && v <= 1.5);
            last = v;
        }
    }

    #[test]
    fn vs_single_objective_is_plain_gradient_descent() {
        let problem = ScalarProblem::new(vec![1.0], false, 0.0);
        let recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0)]]);
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 100 },
            0,
        )
        .unwrap();
        let mut expected = 0.0;
        for _ in 0..5 {
            trainer.step().unwrap();
            expected -= 0.1 * (expected - 1.0);
            assert!((theta(trainer.state()) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn vs_hand_arithmetic_first_step() {
        // centers 1 and 0: gradients at theta = 0 are (-1, 0); with the
        // uniform initial weights the first step is 0 - 0.1*(-0.5) = 0.05.
        let problem = ScalarProblem::new(vec![1.0, 0.0], false, 0.0);
        let recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0), sup(1)]]);
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer.step().unwrap();
        assert!((theta(trainer.state()) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn vs_opposed_gradients_balance_and_freeze_theta() {
        // Objectives 0.5 (theta - 1)^2 and 0.5 (theta + 1)^2: at any theta the
        // gradients differ by a constant 2; between the centers they oppose.
        let problem = ScalarProblem::new(vec![1.0, -1.0], false, 0.0);
        let recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0), sup(1)]]);
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 5000 },
            0,
        )
        .unwrap();
        for _ in 0..3000 {
            trainer.step().unwrap();
        }
        let state = trainer.state();
        let lambda = &state.weight_states[0].lambda;
        assert!((lambda.get(0) - 0.5).abs() < 1e-6);
        assert!((lambda.get(1) - 0.5).abs() < 1e-6);
        assert!(theta(state).abs() < 1e-6);
    }

    #[test]
    fn vc_hand_arithmetic_and_zero_unsup_gradient() {
        // theta = 0, supervised center 1, eta = 0.5:
        // step = -0.1 * ((theta - 1) + 0.5 * theta) = 0.1.
        let problem = ScalarProblem::new(vec![1.0], true, 0.0);
        let mut recipe = base_recipe(RecipeKind::Vc, vec![vec![sup(0)]]);
        recipe.unsup_penalty = Some(PenaltySchedule { init: 0.5, rate_per_epoch: 0.0, cap: 0.5 });
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer.step().unwrap();
        assert!((theta(trainer.state()) - 0.1).abs() < 1e-15);
        // At theta = 0 the self-supervised gradient vanished, so the step
        // equals the pure supervised one regardless of eta.
    }

    #[test]
    fn vm_hand_arithmetic_step() {
        // Level 1 center 1, level 2 center -1, eta_1 = 0.5, unsup eta = 0.1:
        // step = -0.1 * ((-1) + 0.5 * 1 + 0.1 * 0) = 0.05.
        let problem = ScalarProblem::new(vec![1.0, -1.0], true, 0.0);
        let mut recipe = base_recipe(RecipeKind::Vm, vec![vec![sup(0)], vec![sup(1)]]);
        recipe.level_penalties =
            vec![PenaltySchedule { init: 0.5, rate_per_epoch: 0.0, cap: 0.5 }];
        recipe.unsup_penalty = Some(PenaltySchedule { init: 0.1, rate_per_epoch: 0.0, cap: 0.1 });
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer.step().unwrap();
        assert!((theta(trainer.state()) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn vm_zero_level_penalty_freezes_lower_levels_out() {
        let problem = ScalarProblem::new(vec![1.0, -1.0], false, 0.0);
        let mut recipe = base_recipe(RecipeKind::Vm, vec![vec![sup(0)], vec![sup(1)]]);
        recipe.level_penalties = vec![PenaltySchedule::zero()];
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 200 },
            0,
        )
        .unwrap();
        for _ in 0..200 {
            trainer.step().unwrap();
        }
        // Only the upper level drives theta: plain descent toward center 1.
        assert!((theta(trainer.state()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vm_nested_penalties_multiply() {
        let mut recipe = base_recipe(RecipeKind::Vm, vec![vec![sup(0)], vec![sup(1)]]);
        recipe.nested = true;
        recipe.level_penalties =
            vec![PenaltySchedule { init: 0.5, rate_per_epoch: 0.0, cap: 0.5 }];
        recipe.unsup_penalty = Some(PenaltySchedule { init: 0.4, rate_per_epoch: 0.0, cap: 0.4 });
        let problem = ScalarProblem::new(vec![1.0, -1.0], true, 2.0);
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer.step().unwrap();
        // direction = (theta-1) + 0.5 (theta+1) + (0.5*0.4) theta at theta=2:
        // 1 + 1.5 + 0.4 = 2.9; theta' = 2 - 0.1*2.9 = 1.71.
        assert!((theta(trainer.state()) - 1.71).abs() < 1e-12);
    }

    #[test]
    fn vm_order_label_swap_mirrors_symmetric_trajectories() {
        let make = |first: usize, second: usize, label: &str| {
            let problem = ScalarProblem::new(vec![1.0, -1.0], false, 0.0);
            let mut recipe =
                base_recipe(RecipeKind::Vm, vec![vec![sup(first)], vec![sup(second)]]);
            recipe.order_label = label.into();
            recipe.level_penalties =
                vec![PenaltySchedule { init: 0.5, rate_per_epoch: 0.0, cap: 0.5 }];
            let mut trainer = Trainer::new(
                &problem,
                recipe,
                TrainOptions::default(),
                Budget { epochs: 1, iters_per_epoch: 500 },
                0,
            )
            .unwrap();
            let mut trajectory = Vec::new();
            for _ in 0..500 {
                trainer.step().unwrap();
                trajectory.push(theta(trainer.state()));
            }
            trajectory
        };
        // Swapping which center sits at the upper level mirrors the
        // trajectory around zero for these symmetric losses.
        let uas = make(0, 1, "UAS");
        let usa = make(1, 0, "USA");
        for (a, b) in uas.iter().zip(&usa) {
            assert!((a + b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn head_updates_scale_with_beta_and_zero_rate_is_identity() {
        use crate::problems::head_quadratics;
        let problem = head_quadratics(1, 1, 2, 11).unwrap();
        let mut recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0)]]);
        recipe.beta = 0.5;
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        let head = sup(0).head_block().unwrap();
        let full = BatchSelection::full(&problem);
        let grad0 = problem
            .evaluate(&trainer.state().params, &full)
            .unwrap()
            .head_grads[&sup(0)]
            .clone();
        trainer.step().unwrap();
        let after = trainer.state().params.block(&head).unwrap().to_vec();
        for (a, g) in after.iter().zip(&grad0) {
            assert!((a - (-0.5) * g).abs() < 1e-15);
        }
        // A zero-rate head update is the exact identity on the block.
        let mut params = trainer.state().params.clone();
        let before = params.block(&head).unwrap().to_vec();
        params.update_block(&head, -0.0, &grad0).unwrap();
        assert_eq!(params.block(&head).unwrap(), &before[..]);
    }

    #[test]
    fn two_stage_phases_and_quadratic_pretraining() {
        let problem = ScalarProblem::new(vec![1.0], true, 2.0);
        let mut recipe = base_recipe(RecipeKind::TwoStage, vec![vec![sup(0)]]);
        recipe.pretrain_epochs = 5;
        recipe.alpha = 0.2;
        recipe.beta = 0.1;
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions { log_every: 10, ..Default::default() },
            Budget { epochs: 10, iters_per_epoch: 20 },
            0,
        )
        .unwrap();
        for _ in 0..100 {
            trainer.step().unwrap();
        }
        // Phase 1 is plain descent on 0.5 theta^2 from 2.0: (0.8)^100 * 2.
        let expect = 2.0 * 0.8f64.powi(100);
        assert!((theta(trainer.state()) - expect).abs() < 1e-12);
        for _ in 0..100 {
            trainer.step().unwrap();
        }
        // Phase 2 pulls toward the supervised center.
        assert!((theta(trainer.state()) - 1.0).abs() < 1e-3);
        trainer.log_record().unwrap();
        trainer.run().unwrap();
        let out = trainer.finish().unwrap();
        let phases: Vec<Option<String>> =
            out.trace.records.iter().map(|r| r.phase.clone()).collect();
        assert!(phases.iter().any(|p| p.as_deref() == Some("pretrain")));
        assert!(phases.iter().any(|p| p.as_deref() == Some("finetune")));
    }

    #[test]
    fn two_stage_without_pretraining_is_averaged_descent() {
        let problem = ScalarProblem::new(vec![1.0, 0.0], false, 0.0);
        let mut recipe = base_recipe(RecipeKind::TwoStage, vec![vec![sup(0), sup(1)]]);
        recipe.beta = 0.1;
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer.step().unwrap();
        // Mean gradient at 0 is ((0-1) + 0)/2 = -0.5; theta' = 0.05.
        assert!((theta(trainer.state()) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn static_weights_match_uniform_average_and_vertices() {
        let problem = ScalarProblem::new(vec![1.0, 0.0], false, 0.0);
        let mut recipe = base_recipe(RecipeKind::StaticWeight, vec![vec![sup(0), sup(1)]]);
        recipe.static_weights = Some(vec![0.5, 0.5]);
        recipe.beta = 0.1;
        let mut trainer = Trainer::new(
            &problem,
            recipe.clone(),
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer.step().unwrap();
        assert!((theta(trainer.state()) - 0.05).abs() < 1e-15);

        // A vertex weight vector is single-objective descent.
        let mut vertex = recipe.clone();
        vertex.static_weights = Some(vec![1.0, 0.0]);
        let mut trainer2 = Trainer::new(
            &problem,
            vertex,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        trainer2.step().unwrap();
        assert!((theta(trainer2.state()) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn static_weights_accept_five_objective_grid_values() {
        let problem = ScalarProblem::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], false, 0.0);
        let mut recipe = base_recipe(
            RecipeKind::StaticWeight,
            vec![(0..5).map(sup).collect()],
        );
        recipe.static_weights = Some(vec![0.18, 0.19, 0.27, 0.16, 0.20]);
        assert!(recipe.validate(&problem).is_ok());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let problem = ScalarProblem::new(vec![1.0, 0.0], false, 0.0);
        let mut negative_alpha = base_recipe(RecipeKind::Vs, vec![vec![sup(0), sup(1)]]);
        negative_alpha.alpha = -0.1;
        assert!(negative_alpha.validate(&problem).is_err());

        let missing = base_recipe(RecipeKind::Vs, vec![vec![sup(0)]]);
        assert!(missing.validate(&problem).is_err());

        let mut empty_level = base_recipe(RecipeKind::Vm, vec![vec![sup(0), sup(1)], vec![]]);
        empty_level.level_penalties = vec![PenaltySchedule::zero()];
        assert!(empty_level.validate(&problem).is_err());

        let mut bad_static = base_recipe(RecipeKind::StaticWeight, vec![vec![sup(0), sup(1)]]);
        bad_static.static_weights = Some(vec![0.9, 0.3]);
        assert!(bad_static.validate(&problem).is_err());

        let with_unsup = ScalarProblem::new(vec![1.0], true, 0.0);
        let vc_without_penalty = base_recipe(RecipeKind::Vc, vec![vec![sup(0)]]);
        assert!(vc_without_penalty.validate(&with_unsup).is_err());
    }

    #[test]
    fn divergence_guard_aborts_with_numerical_error() {
        let problem = ScalarProblem::new(vec![1.0], false, 0.0);
        let mut recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0)]]);
        recipe.alpha = 1e6;
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 1, iters_per_epoch: 1000 },
            0,
        )
        .unwrap();
        let mut failed = false;
        for _ in 0..1000 {
            match trainer.step() {
                Ok(()) => {}
                Err(Error::Numerical(_)) | Err(Error::NonFinite(_)) => {
                    failed = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(failed, "runaway step size should trip the divergence guard");
    }

    #[test]
    fn zero_budget_trace_has_only_the_initial_record() {
        let problem = ScalarProblem::new(vec![1.0], false, 0.25);
        let recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0)]]);
        let out = train(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 0, iters_per_epoch: 10 },
            0,
        )
        .unwrap();
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(out.trace.records[0].iter, 0);
        assert!(out.trace.final_record.is_some());
        assert_eq!(theta(&out.state), 0.25);
    }

    #[test]
    fn per_level_simplex_invariant_and_weight_partition() {
        let problem = ScalarProblem::new(vec![1.0, -1.0], true, 0.3);
        let mut recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0), sup(1)]]);
        recipe.unsup_penalty = None;
        let mut trainer = Trainer::new(
            &problem,
            recipe,
            TrainOptions::default(),
            Budget { epochs: 2, iters_per_epoch: 50 },
            3,
        )
        .unwrap();
        for _ in 0..100 {
            trainer.step().unwrap();
            let ws = &trainer.state().weight_states[0];
            let sum: f64 = ws.lambda.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(ws.lambda.as_slice().iter().all(|l| *l >= 0.0));
        }
        trainer.log_record().unwrap();
        let record = trainer.records.last().unwrap();
        let sup_sum: f64 = record.lambda["level_1"].iter().sum();
        let total = sup_sum + record.lambda_u.unwrap();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn penalty_values_are_monotone_in_trace() {
        let problem = ScalarProblem::new(vec![1.0], true, 0.5);
        let mut recipe = base_recipe(RecipeKind::Vc, vec![vec![sup(0)]]);
        recipe.unsup_penalty = Some(PenaltySchedule { init: 0.0, rate_per_epoch: 0.3, cap: 1.0 });
        let out = train(
            &problem,
            recipe,
            TrainOptions { log_every: 1, ..Default::default() },
            Budget { epochs: 6, iters_per_epoch: 3 },
            0,
        )
        .unwrap();
        let mut last = -1.0;
        for record in &out.trace.records {
            let eta = record.eta["unsup"];
            assert!(eta >= last && eta <= 1.0);
            last = eta;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn efficient_mode_freezes_restriction_after_warmup() {
        use crate::problems::conflict_by_construction;
        let planted: std::collections::BTreeSet<usize> = [1].into_iter().collect();
        let problem = conflict_by_construction(&planted, &[2, 2, 2], 5).unwrap();
        let recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0), sup(1)]]);
        let options = TrainOptions {
            efficient_mode: true,
            warmup_epochs: 3,
            log_every: 1,
            ..Default::default()
        };
        let out = train(&problem, recipe, options, Budget { epochs: 6, iters_per_epoch: 4 }, 0)
            .unwrap();
        let report = out.conflict_report.expect("detection ran");
        let expected: std::collections::BTreeSet<BlockId> =
            [BlockId::Backbone(1)].into_iter().collect();
        assert_eq!(report.conflicting_layers, expected);
        assert_eq!(out.state.conflicting_layers, expected);
        assert!(out.state.restricted);
        assert_eq!(report.epochs_observed, 3);
        // Restriction applies to the weight state from the boundary on.
        assert_eq!(
            out.state.weight_states[0].restriction.as_ref(),
            Some(&expected)
        );
        // Records before the boundary are unrestricted, after it restricted.
        assert!(!out.trace.records.first().unwrap().restricted);
        assert!(out.trace.records.last().unwrap().restricted);
    }

    #[test]
    fn bi_quadratic_vs_converges_to_pareto_set() {
        use crate::problems::QuadraticSoup;
        let soup = QuadraticSoup::with_options(
            2,
            2,
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            0.0,
            QuadraticSoupOptions { init: Some(vec![0.5, 1.0]), ..Default::default() },
        )
        .unwrap();
        let recipe = base_recipe(RecipeKind::Vs, vec![vec![sup(0), sup(1)]]);
        let out = train(
            &soup,
            recipe,
            TrainOptions { log_every: 1000, ..Default::default() },
            Budget { epochs: 2, iters_per_epoch: 1000 },
            0,
        )
        .unwrap();
        let last = out.trace.records.last().unwrap();
        assert!(last.stationarity <= 1e-4, "stationarity {}", last.stationarity);
        let d = out.trace.final_record.unwrap().pareto_distance.unwrap();
        assert!(d <= 1e-3, "distance {d}");
    }
}
