//! Experiment configuration: parsing, fail-fast validation, default
//! resolution, and problem construction.
//!
//! Configs are JSON with four sections (`problem`, `recipe`, `optimizer`,
//! `output`). Unknown keys anywhere are errors. `resolve` materializes every
//! default (including the seed) so that a resolved config re-fed as input
//! reproduces the identical run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::conflict::DetectionMode;
use crate::error::{Error, Result};
use crate::param_space::ObjectiveId;
use crate::problems::{
    conflict_by_construction, head_quadratics, Activation, Problem, QuadraticSoup,
    QuadraticSoupOptions, TaskKind, ToyMultitaskNet, ToyNetConfig,
};
use crate::recipes::{Budget, PenaltySchedule, RecipeConfig, RecipeKind, TrainOptions};
use crate::weighting::GammaSchedule;

pub const DEFAULT_ALPHA: f64 = 5e-5;
pub const DEFAULT_BETA: f64 = 5e-4;
pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LOG_EVERY: usize = 10;
pub const DEFAULT_WARMUP_EPOCHS: usize = 20;

/// Parameters of each problem family. Structs (not an internally tagged
/// enum) so `deny_unknown_fields` applies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSoupParams {
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictPlantedParams {
    pub dims: Vec<usize>,
    pub planted: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyNetParams {
    pub languages: usize,
    pub tasks: usize,
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default = "default_dataset_size")]
    pub unlabeled_size: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_regression_dim")]
    pub regression_dim: usize,
    #[serde(default = "default_true")]
    pub with_unsupervised: bool,
    #[serde(default)]
    pub full_batch: bool,
}

fn default_activation() -> String {
    "tanh".into()
}
fn default_dataset_size() -> usize {
    256
}
fn default_classes() -> usize {
    3
}
fn default_regression_dim() -> usize {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadQuadraticsParams {
    pub languages: usize,
    pub tasks: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone)]
pub enum ProblemParams {
    QuadraticSoup(QuadraticSoupParams),
    ConflictPlanted(ConflictPlantedParams),
    ToyNet(ToyNetParams),
    HeadQuadratics(HeadQuadraticsParams),
}

impl ProblemParams {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemParams::QuadraticSoup(_) => "quadratic_soup",
            ProblemParams::ConflictPlanted(_) => "conflict_planted",
            ProblemParams::ToyNet(_) => "toy_net",
            ProblemParams::HeadQuadratics(_) => "head_quadratics",
        }
    }

}

/// The `problem` section: family name, parameters, and the master seed.
#[derive(Debug, Clone)]
pub struct ProblemSection {
    pub params: ProblemParams,
    pub seed: Option<u64>,
}

impl ProblemSection {
    pub fn from_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("problem section must be an object".into()))?;
        let mut rest = obj.clone();
        let name = rest
            .remove("name")
            .and_then(|v| v.as_str().map(str::to_string))
            .ok_or_else(|| Error::Config("problem.name is required".into()))?;
        let seed = match rest.remove("seed") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| {
                Error::Config("problem.seed must be a nonnegative integer".into())
            })?),
        };
        let remainder = Value::Object(rest);
        let params = match name.as_str() {
            "quadratic_soup" => ProblemParams::QuadraticSoup(
                serde_json::from_value(remainder)
                    .map_err(|e| Error::Config(format!("problem section: {e}")))?,
            ),
            "conflict_planted" => ProblemParams::ConflictPlanted(
                serde_json::from_value(remainder)
                    .map_err(|e| Error::Config(format!("problem section: {e}")))?,
            ),
            "toy_net" => ProblemParams::ToyNet(
                serde_json::from_value(remainder)
                    .map_err(|e| Error::Config(format!("problem section: {e}")))?,
            ),
            "head_quadratics" => ProblemParams::HeadQuadratics(
                serde_json::from_value(remainder)
                    .map_err(|e| Error::Config(format!("problem section: {e}")))?,
            ),
            other => {
                return Err(Error::Config(format!("unknown problem family `{other}`")));
            }
        };
        Ok(ProblemSection { params, seed })
    }

    pub fn to_value(&self) -> Result<Value> {
        let mut obj = match &self.params {
            ProblemParams::QuadraticSoup(p) => to_object(serde_json::to_value(p)?),
            ProblemParams::ConflictPlanted(p) => to_object(serde_json::to_value(p)?),
            ProblemParams::ToyNet(p) => to_object(serde_json::to_value(p)?),
            ProblemParams::HeadQuadratics(p) => to_object(serde_json::to_value(p)?),
        }?;
        obj.insert("name".into(), json!(self.params.name()));
        if let Some(seed) = self.seed {
            obj.insert("seed".into(), json!(seed));
        }
        // Deterministic key order for fingerprints and resolved configs.
        Ok(Value::Object(sort_map(obj)))
    }

    /// Fingerprint of the problem identity: every parameter except the seed,
    /// so runs of a seed family share it.
    pub fn fingerprint(&self) -> Result<String> {
        let mut value = self.to_value()?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("seed");
        }
        let canonical = serde_json::to_string(&value)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Construct the problem, generating data from `seed`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Problem>> {
        match &self.params {
            ProblemParams::QuadraticSoup(p) => {
                let soup = QuadraticSoup::with_options(
                    p.centers.len(),
                    p.dim,
                    p.centers.clone(),
                    p.noise_scale,
                    QuadraticSoupOptions {
                        scales: p.scales.clone(),
                        init: p.init.clone(),
                        samples: p.samples,
                        seed,
                    },
                )?;
                Ok(Box::new(soup))
            }
            ProblemParams::ConflictPlanted(p) => {
                let planted = p.planted.iter().copied().collect();
                Ok(Box::new(conflict_by_construction(&planted, &p.dims, seed)?))
            }
            ProblemParams::ToyNet(p) => {
                let activation = match p.activation.as_str() {
                    "tanh" => Activation::Tanh,
                    "linear" => Activation::Linear,
                    other => {
                        return Err(Error::Config(format!("unknown activation `{other}`")))
                    }
                };
                if p.tasks == 0 || p.tasks > 2 {
                    return Err(Error::Config("toy_net supports 1 or 2 tasks".into()));
                }
                let task_kinds =
                    [TaskKind::CrossEntropy, TaskKind::SquaredError][..p.tasks].to_vec();
                Ok(Box::new(ToyMultitaskNet::new(ToyNetConfig {
                    languages: p.languages,
                    widths: p.widths.clone(),
                    activation,
                    task_kinds,
                    classes: p.classes,
                    regression_dim: p.regression_dim,
                    dataset_sizes: vec![p.dataset_size; p.languages],
                    unlabeled_size: p.unlabeled_size,
                    with_unsupervised: p.with_unsupervised,
                    full_batch: p.full_batch,
                    seed,
                })?))
            }
            ProblemParams::HeadQuadratics(p) => Ok(Box::new(head_quadratics(
                p.languages,
                p.tasks,
                p.head_dim,
                seed,
            )?)),
        }
    }
}

fn to_object(value: Value) -> Result<Map<String, Value>> {
    value
        .as_object()
        .cloned()
        .ok_or_else(|| Error::Config("expected an object".into()))
}

fn sort_map(map: Map<String, Value>) -> Map<String, Value> {
    let mut entries: Vec<(String, Value)> = map.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries.into_iter().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSection {
    pub kind: RecipeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_label: Option<String>,
    /// Penalty schedules keyed `level_2`, ..., `unsup`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalties: Option<BTreeMap<String, PenaltySchedule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_schedule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters_per_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficient_mode: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionMode>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<String>>,
}

/// A fully resolved experiment: every default materialized, seed fixed.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub problem: ProblemSection,
    pub recipe: RecipeSection,
    pub optimizer: OptimizerSection,
    pub output: OutputSection,
    pub seed: u64,
}

/// Parse an experiment config from JSON text, fail-fast on unknown keys.
pub fn parse_config(text: &str) -> Result<(ProblemSection, RecipeSection, OptimizerSection, OutputSection)> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "problem" | "recipe" | "optimizer" | "output") {
            return Err(Error::Config(format!("unknown config section `{key}`")));
        }
    }
    let problem = ProblemSection::from_value(
        obj.get("problem")
            .ok_or_else(|| Error::Config("missing problem section".into()))?,
    )?;
    let recipe: RecipeSection = serde_json::from_value(
        obj.get("recipe")
            .cloned()
            .ok_or_else(|| Error::Config("missing recipe section".into()))?,
    )
    .map_err(|e| Error::Config(format!("recipe section: {e}")))?;
    let optimizer: OptimizerSection = match obj.get("optimizer") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::Config(format!("optimizer section: {e}")))?,
        None => OptimizerSection::default(),
    };
    let output: OutputSection = match obj.get("output") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::Config(format!("output section: {e}")))?,
        None => OutputSection::default(),
    };
    Ok((problem, recipe, optimizer, output))
}

/// Resolve defaults and the seed. Precedence: explicit override (CLI flag),
/// then the config's seed, then the `OBJSOUP_SEED` environment variable.
pub fn resolve(
    problem: ProblemSection,
    recipe: RecipeSection,
    optimizer: OptimizerSection,
    output: OutputSection,
    seed_override: Option<u64>,
) -> Result<ResolvedConfig> {
    let seed = seed_override
        .or(problem.seed)
        .or_else(|| {
            std::env::var("OBJSOUP_SEED")
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
        })
        .ok_or_else(|| {
            Error::Config(
                "no seed: set problem.seed, pass --seed, or export OBJSOUP_SEED".into(),
            )
        })?;

    let built = problem.build(seed)?;
    let spec = built.spec();
    let supervised: Vec<ObjectiveId> = spec.supervised();

    let levels: Vec<Vec<String>> = match &recipe.levels {
        Some(levels) => levels.clone(),
        None => {
            if recipe.kind == RecipeKind::Vm {
                return Err(Error::Config(
                    "vm requires explicit levels (supervised objective ids per level)".into(),
                ));
            }
            vec![supervised.iter().map(|o| o.to_string()).collect()]
        }
    };

    let mut penalties = recipe.penalties.clone().unwrap_or_default();
    let needs_unsup = matches!(recipe.kind, RecipeKind::Vc | RecipeKind::Vm | RecipeKind::Joint)
        && spec.has_unsupervised;
    if needs_unsup {
        penalties
            .entry("unsup".into())
            .or_insert(PenaltySchedule { init: 0.0, rate_per_epoch: 0.02, cap: 1.5 });
    }
    if recipe.kind == RecipeKind::Vm {
        for level in 2..=levels.len() {
            penalties
                .entry(format!("level_{level}"))
                .or_insert(PenaltySchedule { init: 0.1, rate_per_epoch: 0.02, cap: 1.5 });
        }
    }
    for key in penalties.keys() {
        let valid = key == "unsup"
            || key
                .strip_prefix("level_")
                .and_then(|n| n.parse::<usize>().ok())
                .map(|n| n >= 2 && n <= levels.len())
                .unwrap_or(false);
        if !valid {
            return Err(Error::Config(format!("unknown penalty key `{key}`")));
        }
    }

    let resolved_recipe = RecipeSection {
        kind: recipe.kind,
        levels: Some(levels),
        order_label: Some(recipe.order_label.unwrap_or_default()),
        penalties: Some(penalties),
        nested: Some(recipe.nested.unwrap_or(false)),
        static_weights: recipe.static_weights,
        epsilon: recipe.epsilon,
        pretrain_epochs: Some(recipe.pretrain_epochs.unwrap_or(0)),
    };

    let resolved_optimizer = OptimizerSection {
        alpha: Some(optimizer.alpha.unwrap_or(DEFAULT_ALPHA)),
        beta: Some(optimizer.beta.unwrap_or(DEFAULT_BETA)),
        gamma: Some(optimizer.gamma.unwrap_or(DEFAULT_GAMMA)),
        gamma_schedule: Some(optimizer.gamma_schedule.unwrap_or_else(|| "constant".into())),
        batch_size: Some(optimizer.batch_size.unwrap_or(DEFAULT_BATCH_SIZE)),
        iters_per_epoch: Some(optimizer.iters_per_epoch.unwrap_or(100)),
        epochs: Some(optimizer.epochs.unwrap_or(10)),
        log_every: Some(optimizer.log_every.unwrap_or(DEFAULT_LOG_EVERY)),
        efficient_mode: Some(optimizer.efficient_mode.unwrap_or(false)),
        warmup_epochs: Some(optimizer.warmup_epochs.unwrap_or(DEFAULT_WARMUP_EPOCHS)),
        detection: Some(optimizer.detection.unwrap_or_default()),
    };

    let resolved_output = OutputSection {
        directory: output.directory,
        formats: Some(
            output
                .formats
                .unwrap_or_else(|| vec!["trace_jsonl".into(), "summary_json".into()]),
        ),
    };
    if let Some(formats) = &resolved_output.formats {
        for f in formats {
            if !matches!(f.as_str(), "trace_jsonl" | "summary_json") {
                return Err(Error::Config(format!("unknown output format `{f}`")));
            }
        }
    }

    let config = ResolvedConfig {
        problem: ProblemSection { params: problem.params, seed: Some(seed) },
        recipe: resolved_recipe,
        optimizer: resolved_optimizer,
        output: resolved_output,
        seed,
    };
    // Validate eagerly so `run` fails before creating any output.
    let (recipe_config, options, budget) = config.build_training(spec)?;
    recipe_config.validate(built.as_ref())?;
    options.validate(&budget)?;
    Ok(config)
}

impl ResolvedConfig {
    pub fn parse_resolved(text: &str, seed_override: Option<u64>) -> Result<ResolvedConfig> {
        let (problem, recipe, optimizer, output) = parse_config(text)?;
        resolve(problem, recipe, optimizer, output, seed_override)
    }

    pub fn to_value(&self) -> Result<Value> {
        Ok(json!({
            "problem": self.problem.to_value()?,
            "recipe": serde_json::to_value(&self.recipe)?,
            "optimizer": serde_json::to_value(&self.optimizer)?,
            "output": serde_json::to_value(&self.output)?,
        }))
    }

    pub fn build_problem(&self) -> Result<Box<dyn Problem>> {
        self.problem.build(self.seed)
    }

    /// Internal recipe/options/budget from the resolved sections.
    pub fn build_training(
        &self,
        spec: &crate::problems::ProblemSpec,
    ) -> Result<(RecipeConfig, TrainOptions, Budget)> {
        let levels_str = self.recipe.levels.as_ref().expect("resolved");
        let mut levels = Vec::new();
        for level in levels_str {
            let mut ids = Vec::new();
            for s in level {
                ids.push(s.parse::<ObjectiveId>()?);
            }
            levels.push(ids);
        }
        let penalties = self.recipe.penalties.clone().unwrap_or_default();
        let mut level_penalties = Vec::new();
        for level in 2..=levels.len() {
            if let Some(schedule) = penalties.get(&format!("level_{level}")) {
                level_penalties.push(*schedule);
            }
        }
        if self.recipe.kind != RecipeKind::Vm {
            level_penalties.clear();
        }
        let unsup_penalty = if spec.has_unsupervised {
            penalties.get("unsup").copied()
        } else {
            None
        };

        let optimizer = &self.optimizer;
        let gamma_base = optimizer.gamma.expect("resolved");
        let gamma = match optimizer.gamma_schedule.as_deref().expect("resolved") {
            "constant" => GammaSchedule::Constant { base: gamma_base },
            "inv_sqrt" => GammaSchedule::InvSqrt { base: gamma_base },
            other => return Err(Error::Config(format!("unknown gamma schedule `{other}`"))),
        };

        let recipe_config = RecipeConfig {
            kind: self.recipe.kind,
            levels,
            order_label: self.recipe.order_label.clone().unwrap_or_default(),
            level_penalties,
            unsup_penalty,
            nested: self.recipe.nested.unwrap_or(false),
            alpha: optimizer.alpha.expect("resolved"),
            beta: optimizer.beta.expect("resolved"),
            gamma,
            static_weights: self.recipe.static_weights.clone(),
            epsilon_track: self.recipe.epsilon,
            pretrain_epochs: self.recipe.pretrain_epochs.unwrap_or(0),
        };
        let options = TrainOptions {
            batch_size: optimizer.batch_size.expect("resolved"),
            log_every: optimizer.log_every.expect("resolved"),
            efficient_mode: optimizer.efficient_mode.unwrap_or(false),
            warmup_epochs: optimizer.warmup_epochs.expect("resolved"),
            detection_mode: optimizer.detection.unwrap_or_default(),
            divergence_guard: 1e12,
        };
        let budget = Budget {
            epochs: optimizer.epochs.expect("resolved"),
            iters_per_epoch: optimizer.iters_per_epoch.expect("resolved"),
        };
        Ok((recipe_config, options, budget))
    }

    pub fn wants_format(&self, format: &str) -> bool {
        self.output
            .formats
            .as_ref()
            .map(|f| f.iter().any(|x| x == format))
            .unwrap_or(true)
    }
}

/// Named default problems for `gradcheck`.
pub fn registry_problem(name: &str) -> Result<ProblemSection> {
    let params = match name {
        "bi_quadratic" => ProblemParams::QuadraticSoup(QuadraticSoupParams {
            dim: 2,
            centers: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            noise_scale: 0.0,
            scales: None,
            init: None,
            samples: 64,
        }),
        "quadratic_soup3" => ProblemParams::QuadraticSoup(QuadraticSoupParams {
            dim: 2,
            centers: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]],
            noise_scale: 0.0,
            scales: None,
            init: None,
            samples: 64,
        }),
        "toy_net" => ProblemParams::ToyNet(ToyNetParams {
            languages: 2,
            tasks: 2,
            widths: vec![6, 8, 8],
            activation: "tanh".into(),
            dataset_size: 32,
            unlabeled_size: 32,
            classes: 3,
            regression_dim: 2,
            with_unsupervised: true,
            full_batch: true,
        }),
        "toy_net_linear" => ProblemParams::ToyNet(ToyNetParams {
            languages: 1,
            tasks: 2,
            widths: vec![4, 6, 6],
            activation: "linear".into(),
            dataset_size: 32,
            unlabeled_size: 32,
            classes: 3,
            regression_dim: 2,
            with_unsupervised: true,
            full_batch: true,
        }),
        "conflict_planted" => ProblemParams::ConflictPlanted(ConflictPlantedParams {
            dims: vec![2, 2, 2, 2],
            planted: vec![0],
        }),
        "head_quadratics" => ProblemParams::HeadQuadratics(HeadQuadraticsParams {
            languages: 2,
            tasks: 1,
            head_dim: 3,
        }),
        other => {
            return Err(Error::Config(format!(
                "unknown problem `{other}`; known: bi_quadratic, quadratic_soup3, toy_net, toy_net_linear, conflict_planted, head_quadratics"
            )))
        }
    };
    Ok(ProblemSection { params, seed: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "problem": {"name": "quadratic_soup", "seed": 7, "dim": 2,
                    "centers": [[1.0, 0.0], [-1.0, 0.0]]},
        "recipe": {"kind": "vs"},
        "optimizer": {"alpha": 0.1, "epochs": 2, "iters_per_epoch": 5}
    }"#;

    #[test]
    fn parse_and_resolve_defaults() {
        let config = ResolvedConfig::parse_resolved(BASE, None).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.optimizer.beta, Some(DEFAULT_BETA));
        assert_eq!(config.recipe.levels.as_ref().unwrap()[0], vec!["t0_n0", "t1_n0"]);
        let problem = config.build_problem().unwrap();
        assert_eq!(problem.spec().objectives.len(), 2);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = BASE.replace("\"kind\": \"vs\"", "\"kind\": \"vs\", \"typo\": 1");
        assert!(matches!(
            ResolvedConfig::parse_resolved(&bad, None),
            Err(Error::Config(_))
        ));
        let bad2 = BASE.replace("\"dim\": 2", "\"dim\": 2, \"unknown\": 3");
        assert!(ResolvedConfig::parse_resolved(&bad2, None).is_err());
        let bad3 = format!("{},\n\"extra\": {{}}}}", BASE.trim_end().trim_end_matches('}'));
        assert!(ResolvedConfig::parse_resolved(&bad3, None).is_err());
    }

    #[test]
    fn negative_alpha_rejected_before_output() {
        let bad = BASE.replace("\"alpha\": 0.1", "\"alpha\": -0.5");
        assert!(matches!(
            ResolvedConfig::parse_resolved(&bad, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seed_precedence_and_fallback() {
        let config = ResolvedConfig::parse_resolved(BASE, Some(99)).unwrap();
        assert_eq!(config.seed, 99);
        let without_seed = BASE.replace("\"seed\": 7, ", "");
        assert!(ResolvedConfig::parse_resolved(&without_seed, None).is_err());
        let cfg = ResolvedConfig::parse_resolved(&without_seed, Some(3)).unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn resolved_config_round_trips_identically() {
        let config = ResolvedConfig::parse_resolved(BASE, None).unwrap();
        let text = serde_json::to_string_pretty(&config.to_value().unwrap()).unwrap();
        let again = ResolvedConfig::parse_resolved(&text, None).unwrap();
        assert_eq!(
            config.to_value().unwrap(),
            again.to_value().unwrap(),
            "re-resolving a resolved config must be the identity"
        );
    }

    #[test]
    fn fingerprint_ignores_seed_only() {
        let a = ResolvedConfig::parse_resolved(BASE, None).unwrap();
        let b = ResolvedConfig::parse_resolved(&BASE.replace("\"seed\": 7", "\"seed\": 8"), None)
            .unwrap();
        assert_eq!(a.problem.fingerprint().unwrap(), b.problem.fingerprint().unwrap());
        let c = ResolvedConfig::parse_resolved(
            &BASE.replace("[[1.0, 0.0], [-1.0, 0.0]]", "[[2.0, 0.0], [-1.0, 0.0]]"),
            None,
        )
        .unwrap();
        assert_ne!(a.problem.fingerprint().unwrap(), c.problem.fingerprint().unwrap());
    }

    #[test]
    fn vm_requires_levels_and_penalty_defaults_fill_in() {
        let vm = r#"{
            "problem": {"name": "quadratic_soup", "seed": 1, "dim": 1,
                        "centers": [[1.0], [-1.0]]},
            "recipe": {"kind": "vm", "levels": [["t0_n0"], ["t1_n0"]]},
            "optimizer": {"alpha": 0.1, "epochs": 1, "iters_per_epoch": 2}
        }"#;
        let config = ResolvedConfig::parse_resolved(vm, None).unwrap();
        let penalties = config.recipe.penalties.as_ref().unwrap();
        assert!(penalties.contains_key("level_2"));
        assert_eq!(penalties["level_2"].init, 0.1);

        let missing = vm.replace(", \"levels\": [[\"t0_n0\"], [\"t1_n0\"]]", "");
        assert!(ResolvedConfig::parse_resolved(&missing, None).is_err());
    }

    #[test]
    fn registry_names_build() {
        for name in [
            "bi_quadratic",
            "quadratic_soup3",
            "toy_net",
            "toy_net_linear",
            "conflict_planted",
            "head_quadratics",
        ] {
            let section = registry_problem(name).unwrap();
            section.build(5).unwrap();
        }
        assert!(registry_problem("nope").is_err());
    }
}
