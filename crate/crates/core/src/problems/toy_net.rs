//! A small shared-backbone multi-task network.
//!
//! Feed-forward stack over synthetic inputs, one block per layer; per
//! (language, task) linear heads with softmax cross-entropy ("recognition")
//! or squared-error ("translation") losses; and a self-supervised
//! reconstruction proxy through the backbone plus a tied linear decoder.
//! Gradients are exact reverse-mode accumulation implemented here; there is
//! no general autodiff.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param_space::{BlockId, ObjectiveId, ParamVector};
use crate::problems::{BatchSelection, ObjectiveEval, Problem, ProblemSpec};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Softmax cross-entropy on synthetic labels.
    CrossEntropy,
    /// Squared-error regression on synthetic targets.
    SquaredError,
}

#[derive(Debug, Clone)]
pub struct ToyNetConfig {
    pub languages: usize,
    /// `[input_dim, w1, ..., wL]`: one backbone block per layer.
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// One entry per task; defaults to `[CrossEntropy, SquaredError][..N]`.
    pub task_kinds: Vec<TaskKind>,
    pub classes: usize,
    pub regression_dim: usize,
    /// Labeled samples per language.
    pub dataset_sizes: Vec<usize>,
    pub unlabeled_size: usize,
    pub with_unsupervised: bool,
    /// When set, every evaluation sees the full dataset (deterministic runs).
    pub full_batch: bool,
    /// Data-stream seed.
    pub seed: u64,
}

/// Convenience constructor with the default task mapping.
pub fn toy_multitask_net(
    languages: usize,
    tasks: usize,
    widths: Vec<usize>,
    dataset_sizes: Vec<usize>,
    seed: u64,
) -> Result<ToyMultitaskNet> {
    if tasks == 0 || tasks > 2 {
        return Err(Error::Config(
            "default task mapping covers 1..=2 tasks (recognition, translation)".into(),
        ));
    }
    let task_kinds = [TaskKind::CrossEntropy, TaskKind::SquaredError][..tasks].to_vec();
    ToyMultitaskNet::new(ToyNetConfig {
        languages,
        widths,
        activation: Activation::Tanh,
        task_kinds,
        classes: 3,
        regression_dim: 2,
        dataset_sizes,
        unlabeled_size: 128,
        with_unsupervised: true,
        full_batch: false,
        seed,
    })
}

struct LangData {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    targets: Vec<Vec<f64>>,
}

pub struct ToyMultitaskNet {
    cfg: ToyNetConfig,
    spec: ProblemSpec,
    data: Vec<LangData>,
    unlabeled: Vec<Vec<f64>>,
}

impl ToyMultitaskNet {
    pub fn new(cfg: ToyNetConfig) -> Result<Self> {
        if cfg.languages == 0 {
            return Err(Error::Config("toy net needs at least one language".into()));
        }
        if cfg.widths.len() < 2 || cfg.widths.iter().any(|w| *w == 0) {
            return Err(Error::Config(
                "widths must be [input_dim, w1, ..] with positive entries".into(),
            ));
        }
        if cfg.task_kinds.is_empty() {
            return Err(Error::Config("toy net needs at least one task".into()));
        }
        if cfg.dataset_sizes.len() != cfg.languages
            || cfg.dataset_sizes.iter().any(|s| *s == 0)
        {
            return Err(Error::Config(
                "dataset_sizes must list one positive size per language".into(),
            ));
        }
        if cfg.classes < 2 {
            return Err(Error::Config("classification needs at least 2 classes".into()));
        }
        if cfg.regression_dim == 0 {
            return Err(Error::Config("regression_dim must be positive".into()));
        }
        if cfg.with_unsupervised && cfg.unlabeled_size == 0 {
            return Err(Error::Config("unlabeled_size must be positive".into()));
        }

        let d_in = cfg.widths[0];
        let layer_count = cfg.widths.len() - 1;
        let mut backbone_blocks = Vec::new();
        for layer in 0..layer_count {
            let dim = cfg.widths[layer + 1] * cfg.widths[layer] + cfg.widths[layer + 1];
            backbone_blocks.push((BlockId::Backbone(layer), dim));
        }
        let mut objectives = Vec::new();
        let mut heads = Vec::new();
        for t in 0..cfg.languages {
            for (n, kind) in cfg.task_kinds.iter().enumerate() {
                let id = ObjectiveId::Supervised { language: t, task: n };
                let out = match kind {
                    TaskKind::CrossEntropy => cfg.classes,
                    TaskKind::SquaredError => cfg.regression_dim,
                };
                let w_l = *cfg.widths.last().unwrap();
                heads.push((id.head_block().unwrap(), out * w_l + out));
                objectives.push(id);
            }
        }
        if cfg.with_unsupervised {
            objectives.push(ObjectiveId::Unsupervised);
        }

        // Reconstruction through a tied linear decoder reaches exactly zero
        // when the stack is linear and no layer narrows below the input.
        let unsup_optimum = (cfg.with_unsupervised
            && cfg.activation == Activation::Linear
            && cfg.widths[1..].iter().all(|w| *w >= d_in))
        .then_some(0.0);

        let mut data = Vec::new();
        for t in 0..cfg.languages {
            let mut rng = stream_rng(cfg.seed, "data", t as u64);
            let size = cfg.dataset_sizes[t];
            let inputs: Vec<Vec<f64>> = (0..size)
                .map(|_| (0..d_in).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            // Fixed random teachers make both tasks learnable.
            let class_teacher: Vec<Vec<f64>> = (0..cfg.classes)
                .map(|_| (0..d_in).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let reg_teacher: Vec<Vec<f64>> = (0..cfg.regression_dim)
                .map(|_| (0..d_in).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let labels: Vec<usize> = inputs
                .iter()
                .map(|x| {
                    let mut best = 0;
                    let mut best_score = f64::NEG_INFINITY;
                    for (c, row) in class_teacher.iter().enumerate() {
                        let score: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                        if score > best_score {
                            best_score = score;
                            best = c;
                        }
                    }
                    best
                })
                .collect();
            let targets: Vec<Vec<f64>> = inputs
                .iter()
                .map(|x| {
                    reg_teacher
                        .iter()
                        .map(|row| {
                            let clean: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                            clean + 0.05 * (rng.random::<f64>() * 2.0 - 1.0)
                        })
                        .collect()
                })
                .collect();
            data.push(LangData { inputs, labels, targets });
        }
        let mut unlabeled = Vec::new();
        if cfg.with_unsupervised {
            let mut rng = stream_rng(cfg.seed, "data_unlabeled", 0);
            unlabeled = (0..cfg.unlabeled_size)
                .map(|_| (0..d_in).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
        }

        let spec = ProblemSpec {
            name: "toy_net".into(),
            backbone_blocks,
            heads,
            objectives,
            has_unsupervised: cfg.with_unsupervised,
            known_pareto: None,
            unsup_optimum,
        };
        Ok(ToyMultitaskNet { cfg, spec, data, unlabeled })
    }

    pub fn config(&self) -> &ToyNetConfig {
        &self.cfg
    }

    fn layer_count(&self) -> usize {
        self.cfg.widths.len() - 1
    }

    fn task_kind(&self, id: &ObjectiveId) -> Result<TaskKind> {
        match id {
            ObjectiveId::Supervised { task, .. } => {
                self.cfg.task_kinds.get(*task).copied().ok_or_else(|| {
                    Error::Config(format!("task index {task} out of range"))
                })
            }
            ObjectiveId::Unsupervised => Err(Error::Config(
                "the unsupervised objective has no task kind".into(),
            )),
        }
    }

    /// `(W, b)` views of one backbone block.
    fn layer<'a>(&self, params: &'a ParamVector, layer: usize) -> Result<(&'a [f64], &'a [f64])> {
        let id = BlockId::Backbone(layer);
        let block = params
            .block(&id)
            .ok_or_else(|| Error::StructureMismatch(format!("missing {id}")))?;
        let out = self.cfg.widths[layer + 1];
        let inp = self.cfg.widths[layer];
        Ok((&block[..out * inp], &block[out * inp..]))
    }

    fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut activations = vec![x.to_vec()];
        for layer in 0..self.layer_count() {
            let (w, b) = self.layer(params, layer)?;
            let out = self.cfg.widths[layer + 1];
            let inp = self.cfg.widths[layer];
            let prev = &activations[layer];
            let mut h = vec![0.0; out];
            for r in 0..out {
                let mut acc = b[r];
                for c in 0..inp {
                    acc += w[r * inp + c] * prev[c];
                }
                h[r] = match self.cfg.activation {
                    Activation::Tanh => acc.tanh(),
                    Activation::Linear => acc,
                };
            }
            activations.push(h);
        }
        Ok(activations)
    }

    /// Backpropagate `d_z` (gradient at the backbone output) through the
    /// stack, accumulating per-layer gradients.
    fn backprop_stack(
        &self,
        params: &ParamVector,
        activations: &[Vec<f64>],
        mut d_h: Vec<f64>,
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        for layer in (0..self.layer_count()).rev() {
            let (w, _) = self.layer(params, layer)?;
            let out = self.cfg.widths[layer + 1];
            let inp = self.cfg.widths[layer];
            let h = &activations[layer + 1];
            let prev = &activations[layer];
            let mut d_a = vec![0.0; out];
            for r in 0..out {
                let slope = match self.cfg.activation {
                    Activation::Tanh => 1.0 - h[r] * h[r],
                    Activation::Linear => 1.0,
                };
                d_a[r] = d_h[r] * slope;
            }
            let g = &mut grads[layer];
            for r in 0..out {
                for c in 0..inp {
                    g[r * inp + c] += d_a[r] * prev[c];
                }
                g[out * inp + r] += d_a[r];
            }
            let mut d_prev = vec![0.0; inp];
            for c in 0..inp {
                let mut acc = 0.0;
                for r in 0..out {
                    acc += w[r * inp + c] * d_a[r];
                }
                d_prev[c] = acc;
            }
            d_h = d_prev;
        }
        Ok(())
    }

    fn head_view<'a>(
        &self,
        params: &'a ParamVector,
        id: &ObjectiveId,
    ) -> Result<(&'a [f64], &'a [f64], usize)> {
        let block_id = id.head_block().expect("supervised head");
        let block = params
            .block(&block_id)
            .ok_or_else(|| Error::StructureMismatch(format!("missing {block_id}")))?;
        let w_l = *self.cfg.widths.last().unwrap();
        let out = match self.task_kind(id)? {
            TaskKind::CrossEntropy => self.cfg.classes,
            TaskKind::SquaredError => self.cfg.regression_dim,
        };
        Ok((&block[..out * w_l], &block[out * w_l..], out))
    }

    /// Loss and gradients of one supervised objective over a batch.
    fn eval_supervised(
        &self,
        params: &ParamVector,
        id: &ObjectiveId,
        indices: &[usize],
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
        let (lang, kind) = match id {
            ObjectiveId::Supervised { language, .. } => (*language, self.task_kind(id)?),
            ObjectiveId::Unsupervised => unreachable!("supervised path"),
        };
        let data = self
            .data
            .get(lang)
            .ok_or_else(|| Error::Config(format!("language {lang} out of range")))?;
        let (u, c, out_dim) = self.head_view(params, id)?;
        let w_l = *self.cfg.widths.last().unwrap();
        let batch = indices.len().max(1) as f64;

        let mut loss = 0.0;
        let mut backbone_grads: Vec<Vec<f64>> = self
            .spec
            .backbone_blocks
            .iter()
            .map(|(_, dim)| vec![0.0; *dim])
            .collect();
        let mut head_grad = vec![0.0; u.len() + c.len()];

        for &j in indices {
            let x = data
                .inputs
                .get(j)
                .ok_or_else(|| Error::Config(format!("sample index {j} out of range")))?;
            let activations = self.forward(params, x)?;
            let z = activations.last().unwrap();
            let mut logits = vec![0.0; out_dim];
            for r in 0..out_dim {
                let mut acc = c[r];
                for k in 0..w_l {
                    acc += u[r * w_l + k] * z[k];
                }
                logits[r] = acc;
            }
            let d_out: Vec<f64> = match kind {
                TaskKind::CrossEntropy => {
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let denom: f64 = exps.iter().sum();
                    let label = data.labels[j];
                    loss += denom.ln() + max - logits[label];
                    let mut d: Vec<f64> = exps.iter().map(|e| e / denom).collect();
                    d[label] -= 1.0;
                    d
                }
                TaskKind::SquaredError => {
                    let target = &data.targets[j];
                    let resid: Vec<f64> = logits.iter().zip(target).map(|(o, y)| o - y).collect();
                    loss += 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
                    resid
                }
            };
            let mut d_z = vec![0.0; w_l];
            for r in 0..out_dim {
                for k in 0..w_l {
                    head_grad[r * w_l + k] += d_out[r] * z[k];
                    d_z[k] += u[r * w_l + k] * d_out[r];
                }
                head_grad[out_dim * w_l + r] += d_out[r];
            }
            self.backprop_stack(params, &activations, d_z, &mut backbone_grads)?;
        }
        loss /= batch;
        for g in &mut backbone_grads {
            g.iter_mut().for_each(|v| *v /= batch);
        }
        head_grad.iter_mut().for_each(|v| *v /= batch);
        Ok((loss, backbone_grads, head_grad))
    }

    /// Reconstruction loss and backbone gradient: the decoder reuses the
    /// transposed layer weights (no biases), so every layer receives both an
    /// encoder-path and a decoder-path contribution.
    fn eval_unsupervised(
        &self,
        params: &ParamVector,
        indices: &[usize],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let layers = self.layer_count();
        let batch = indices.len().max(1) as f64;
        let mut loss = 0.0;
        let mut backbone_grads: Vec<Vec<f64>> = self
            .spec
            .backbone_blocks
            .iter()
            .map(|(_, dim)| vec![0.0; *dim])
            .collect();

        for &j in indices {
            let x = self
                .unlabeled
                .get(j)
                .ok_or_else(|| Error::Config(format!("unlabeled index {j} out of range")))?;
            let activations = self.forward(params, x)?;
            let z = activations.last().unwrap().clone();

            // Decode: v[layers] = z, v[i-1] = W_i^T v[i], reconstruction v[0].
            let mut v = vec![Vec::new(); layers + 1];
            v[layers] = z;
            for layer in (0..layers).rev() {
                let (w, _) = self.layer(params, layer)?;
                let out = self.cfg.widths[layer + 1];
                let inp = self.cfg.widths[layer];
                let mut lower = vec![0.0; inp];
                for col in 0..inp {
                    let mut acc = 0.0;
                    for r in 0..out {
                        acc += w[r * inp + col] * v[layer + 1][r];
                    }
                    lower[col] = acc;
                }
                v[layer] = lower;
            }
            let residual: Vec<f64> = v[0].iter().zip(x).map(|(a, b)| a - b).collect();
            loss += 0.5 * residual.iter().map(|r| r * r).sum::<f64>();

            // Decoder path: climb back up, charging each layer's weights.
            let mut g_v = residual;
            for layer in 0..layers {
                let (w, _) = self.layer(params, layer)?;
                let out = self.cfg.widths[layer + 1];
                let inp = self.cfg.widths[layer];
                let g = &mut backbone_grads[layer];
                for r in 0..out {
                    for cidx in 0..inp {
                        g[r * inp + cidx] += v[layer + 1][r] * g_v[cidx];
                    }
                }
                let mut upper = vec![0.0; out];
                for r in 0..out {
                    let mut acc = 0.0;
                    for cidx in 0..inp {
                        acc += w[r * inp + cidx] * g_v[cidx];
                    }
                    upper[r] = acc;
                }
                g_v = upper;
            }
            // Encoder path with the decoder's gradient at z.
            self.backprop_stack(params, &activations, g_v, &mut backbone_grads)?;
        }
        loss /= batch;
        for g in &mut backbone_grads {
            g.iter_mut().for_each(|v| *v /= batch);
        }
        Ok((loss, backbone_grads))
    }

    fn grads_to_column(&self, grads: Vec<Vec<f64>>) -> ParamVector {
        let blocks: BTreeMap<BlockId, Vec<f64>> = self
            .spec
            .backbone_blocks
            .iter()
            .map(|(id, _)| *id)
            .zip(grads)
            .collect();
        ParamVector::new(blocks)
    }
}

fn init_uniform(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()
}

impl Problem for ToyMultitaskNet {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn initial_params(&self, seed: u64) -> ParamVector {
        let mut rng = stream_rng(seed, "init", 0);
        let mut blocks = BTreeMap::new();
        for layer in 0..self.layer_count() {
            let out = self.cfg.widths[layer + 1];
            let inp = self.cfg.widths[layer];
            let scale = 1.0 / (inp as f64).sqrt();
            let mut block = init_uniform(&mut rng, out * inp, scale);
            block.extend(vec![0.0; out]);
            blocks.insert(BlockId::Backbone(layer), block);
        }
        let w_l = *self.cfg.widths.last().unwrap();
        let scale = 1.0 / (w_l as f64).sqrt();
        for (head, dim) in &self.spec.heads {
            let out = dim / (w_l + 1);
            let mut block = init_uniform(&mut rng, out * w_l, scale);
            block.extend(vec![0.0; out]);
            blocks.insert(*head, block);
        }
        ParamVector::new(blocks)
    }

    fn evaluate(&self, params: &ParamVector, batch: &BatchSelection) -> Result<ObjectiveEval> {
        let mut losses = BTreeMap::new();
        let mut cols: Vec<(ObjectiveId, ParamVector)> = Vec::new();
        let mut head_grads = BTreeMap::new();
        for id in &self.spec.objectives {
            match id {
                ObjectiveId::Supervised { .. } => {
                    if let Some(sample) = batch.labeled.get(id) {
                        let (loss, grads, head) =
                            self.eval_supervised(params, id, &sample.indices)?;
                        if !loss.is_finite() {
                            return Err(Error::NonFinite(format!("loss of objective {id}")));
                        }
                        losses.insert(*id, loss);
                        cols.push((*id, self.grads_to_column(grads)));
                        head_grads.insert(*id, head);
                    }
                }
                ObjectiveId::Unsupervised => {
                    if let Some(sample) = &batch.unlabeled {
                        let (loss, grads) = self.eval_unsupervised(params, &sample.indices)?;
                        if !loss.is_finite() {
                            return Err(Error::NonFinite("unsupervised loss".into()));
                        }
                        losses.insert(*id, loss);
                        cols.push((*id, self.grads_to_column(grads)));
                    }
                }
            }
        }
        Ok(ObjectiveEval {
            losses,
            backbone: crate::param_space::GradientMatrix::new(cols)?,
            head_grads,
            samples: batch.clone(),
        })
    }

    fn labeled_size(&self, id: &ObjectiveId) -> usize {
        match id {
            ObjectiveId::Supervised { language, .. } => {
                self.cfg.dataset_sizes.get(*language).copied().unwrap_or(0)
            }
            ObjectiveId::Unsupervised => 0,
        }
    }

    fn unlabeled_size(&self) -> usize {
        self.unlabeled.len()
    }

    fn is_stochastic(&self) -> bool {
        !self.cfg.full_batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_diff_gradient;

    fn small_config(activation: Activation) -> ToyNetConfig {
        ToyNetConfig {
            languages: 2,
            widths: vec![4, 6, 5],
            activation,
            task_kinds: vec![TaskKind::CrossEntropy, TaskKind::SquaredError],
            classes: 3,
            regression_dim: 2,
            dataset_sizes: vec![16, 16],
            unlabeled_size: 16,
            with_unsupervised: true,
            full_batch: true,
            seed: 7,
        }
    }

    fn max_rel_err(net: &ToyMultitaskNet, params: &ParamVector, h: f64) -> f64 {
        let full = BatchSelection::full(net);
        let eval = net.evaluate(params, &full).unwrap();
        let fd = finite_diff_gradient(net, params, h).unwrap();
        let mut worst: f64 = 0.0;
        for (id, numeric) in &fd {
            let analytic = crate::problems::analytic_full_gradient(params, &eval, id).unwrap();
            let mut diff2 = 0.0;
            let mut norm2 = 0.0;
            for (block, values) in analytic.blocks() {
                let nv = numeric.block(block).unwrap();
                for (a, n) in values.iter().zip(nv) {
                    diff2 += (a - n) * (a - n);
                    norm2 += a * a;
                }
            }
            worst = worst.max(diff2.sqrt() / norm2.sqrt().max(1e-12));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = ToyMultitaskNet::new(small_config(Activation::Tanh)).unwrap();
        for seed in 0..3u64 {
            let params = net.initial_params(seed);
            let err = max_rel_err(&net, &params, 1e-5);
            assert!(err < 1e-5, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn coarse_step_fails_on_tanh_net() {
        // Negative control: a huge step breaks the finite-difference match.
        let net = ToyMultitaskNet::new(small_config(Activation::Tanh)).unwrap();
        let params = net.initial_params(1);
        let err = max_rel_err(&net, &params, 0.5);
        assert!(err > 1e-5, "expected a visible mismatch, got {err}");
    }

    #[test]
    fn linear_single_task_matches_least_squares_gradient() {
        // Closed-form oracle for the all-linear single-layer regression:
        // out = U (W x + b) + c, residual r; dU = mean r z^T, dW = mean U^T r x^T.
        let cfg = ToyNetConfig {
            languages: 1,
            widths: vec![3, 4],
            activation: Activation::Linear,
            task_kinds: vec![TaskKind::SquaredError],
            classes: 2,
            regression_dim: 2,
            dataset_sizes: vec![8],
            unlabeled_size: 4,
            with_unsupervised: false,
            full_batch: true,
            seed: 3,
        };
        let net = ToyMultitaskNet::new(cfg).unwrap();
        let params = net.initial_params(9);
        let id = ObjectiveId::Supervised { language: 0, task: 0 };
        let full = BatchSelection::full(&net);
        let eval = net.evaluate(&params, &full).unwrap();

        let (w, b) = net.layer(&params, 0).unwrap();
        let (u, c, out_dim) = net.head_view(&params, &id).unwrap();
        let data = &net.data[0];
        let n = data.inputs.len() as f64;
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let mut du = vec![0.0; u.len()];
        let mut dc = vec![0.0; c.len()];
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            let z: Vec<f64> = (0..4)
                .map(|r| b[r] + (0..3).map(|k| w[r * 3 + k] * x[k]).sum::<f64>())
                .collect();
            let out: Vec<f64> = (0..out_dim)
                .map(|r| c[r] + (0..4).map(|k| u[r * 4 + k] * z[k]).sum::<f64>())
                .collect();
            let r: Vec<f64> = out.iter().zip(y).map(|(o, t)| o - t).collect();
            for i in 0..out_dim {
                for k in 0..4 {
                    du[i * 4 + k] += r[i] * z[k] / n;
                }
                dc[i] += r[i] / n;
            }
            let ut_r: Vec<f64> = (0..4)
                .map(|k| (0..out_dim).map(|i| u[i * 4 + k] * r[i]).sum::<f64>())
                .collect();
            for k in 0..4 {
                for j in 0..3 {
                    dw[k * 3 + j] += ut_r[k] * x[j] / n;
                }
                db[k] += ut_r[k] / n;
            }
        }
        let backbone = eval.backbone.column_for(&id).unwrap();
        let got = backbone.block(&BlockId::Backbone(0)).unwrap();
        for (a, e) in got.iter().zip(dw.iter().chain(db.iter())) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        let head = &eval.head_grads[&id];
        for (a, e) in head.iter().zip(du.iter().chain(dc.iter())) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn reconstruction_reaches_zero_on_orthonormal_linear_stack() {
        let cfg = ToyNetConfig {
            languages: 1,
            widths: vec![3, 5, 4],
            activation: Activation::Linear,
            task_kinds: vec![TaskKind::SquaredError],
            classes: 2,
            regression_dim: 2,
            dataset_sizes: vec![8],
            unlabeled_size: 8,
            with_unsupervised: true,
            full_batch: true,
            seed: 3,
        };
        let net = ToyMultitaskNet::new(cfg).unwrap();
        assert_eq!(net.spec().unsup_optimum, Some(0.0));
        // Identity-padded weights give Q^T Q = I exactly.
        let mut params = net.initial_params(0);
        for layer in 0..2 {
            let out = net.cfg.widths[layer + 1];
            let inp = net.cfg.widths[layer];
            let mut block = vec![0.0; out * inp + out];
            for r in 0..out.min(inp) {
                block[r * inp + r] = 1.0;
            }
            let zeroed = params.block(&BlockId::Backbone(layer)).unwrap().to_vec();
            params
                .update_block(
                    &BlockId::Backbone(layer),
                    -1.0,
                    &zeroed,
                )
                .unwrap();
            params.update_block(&BlockId::Backbone(layer), 1.0, &block).unwrap();
        }
        let (loss, _) = net.eval_unsupervised(&params, &(0..8).collect::<Vec<_>>()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn symmetric_languages_have_equal_initial_losses() {
        // Zero-weight init collapses the backbone output; with the same data
        // seed per language construction, both languages start from the same
        // loss values per task.
        let mut cfg = small_config(Activation::Tanh);
        cfg.languages = 2;
        let net = ToyMultitaskNet::new(cfg).unwrap();
        let params = net.initial_params(0);
        let zeroed = {
            let mut p = params.zeros_like();
            // keep head/backbone shapes, all-zero values
            p.add_scaled_blocks(0.0, &params).unwrap();
            p
        };
        let eval = net.evaluate(&zeroed, &BatchSelection::full(&net)).unwrap();
        // With zero weights the classifier predicts uniform logits for every
        // sample, so the cross-entropy is ln(classes) for both languages.
        let ce0 = eval.losses[&ObjectiveId::Supervised { language: 0, task: 0 }];
        let ce1 = eval.losses[&ObjectiveId::Supervised { language: 1, task: 0 }];
        assert!((ce0 - (3.0f64).ln()).abs() < 1e-12);
        assert!((ce1 - (3.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_widths_rejected() {
        let mut cfg = small_config(Activation::Tanh);
        cfg.widths = vec![4];
        assert!(ToyMultitaskNet::new(cfg).is_err());
        let mut cfg2 = small_config(Activation::Tanh);
        cfg2.widths = vec![4, 0, 3];
        assert!(ToyMultitaskNet::new(cfg2).is_err());
    }
}
