//! Linear per-pixel classifier over the synthetic feature stack, trained with
//! Adam and a polynomial learning-rate schedule.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{softmax, softmax_vjp, LabelField, ScalarField};
use crate::losses::{ClassGammas, LossSpec, DEFAULT_EPSILON};
use crate::metrics::{hard_argmax, panel, MetricPanel, DEFAULT_TAU};
use crate::synth::{extract_features, gen_scene, Scene, SceneConfig, NUM_FEATURES};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const POLY_POWER: f64 = 0.9;

/// `F x C` weight matrix, row-major: `weights[f * C + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    features: usize,
    classes: usize,
    weights: Vec<f64>,
}

impl Model {
    pub fn zeros(features: usize, classes: usize) -> Self {
        Model { features, classes, weights: vec![0.0; features * classes] }
    }

    pub fn from_weights(features: usize, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != features * classes {
            return Err(Error::domain(format!(
                "model: {} weights for a {features}x{classes} matrix",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("model weights must be finite"));
        }
        Ok(Model { features, classes, weights })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Logits `[C, spatial...]` for a feature stack `[F, spatial...]`.
    pub fn logits(&self, features: &ScalarField) -> Result<ScalarField> {
        if features.channels() != self.features {
            return Err(Error::domain(format!(
                "model expects {} feature channels, got {}",
                self.features,
                features.channels()
            )));
        }
        let n = features.pixels();
        let mut out = vec![0.0; self.classes * n];
        for f in 0..self.features {
            let x = features.channel(f);
            for c in 0..self.classes {
                let w = self.weights[f * self.classes + c];
                let row = &mut out[c * n..(c + 1) * n];
                for (o, &xi) in row.iter_mut().zip(x) {
                    *o += w * xi;
                }
            }
        }
        let mut dims = features.dims().to_vec();
        dims[0] = self.classes;
        ScalarField::new(dims, out)
    }

    pub fn predict(&self, features: &ScalarField) -> Result<ScalarField> {
        softmax(&self.logits(features)?)
    }
}

/// Loss value and weight gradient of `loss(softmax(features . W))`.
pub fn loss_and_grad(model: &Model, loss: &LossSpec, features: &ScalarField, labels: &LabelField) -> Result<(f64, Vec<f64>)> {
    let probs = model.predict(features)?;
    let res = loss.evaluate(&probs, labels)?;
    let dz = softmax_vjp(&probs, &res.grad)?;
    let mut grad = vec![0.0; model.weights.len()];
    for f in 0..model.features {
        let x = features.channel(f);
        for c in 0..model.classes {
            grad[f * model.classes + c] = x.iter().zip(dz.channel(c)).map(|(a, b)| a * b).sum();
        }
    }
    Ok((res.value, grad))
}

/// `initial_lr * (1 - iter / max_iter)^0.9`, zero from `max_iter` on.
pub fn poly_lr(initial_lr: f64, iter: usize, max_iter: usize) -> f64 {
    if iter >= max_iter {
        return 0.0;
    }
    initial_lr * (1.0 - iter as f64 / max_iter as f64).powf(POLY_POWER)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam step with decoupled weight decay
/// (`w <- w - lr * weight_decay * w` first).
pub fn adam_step(model: &mut Model, grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    let n = model.weights.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::domain(format!(
            "adam: {n} weights, {} gradients, {} moments",
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (((w, &g), m), v) in model.weights.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *w -= lr * weight_decay * *w;
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Training setup. Scenes `0..n_scenes` of `scenes` are the training set and
/// the next `eval_scenes` indices the held-out split, so `scenes.seed` is the
/// run's only source of randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub scenes: SceneConfig,
    pub epochs: usize,
    pub initial_lr: f64,
    pub weight_decay: f64,
    pub eval_scenes: usize,
    /// NSD tolerance for the held-out panels.
    pub tau: f64,
    /// Skip the per-epoch held-out panels and evaluate only at the end.
    pub final_eval_only: bool,
}

impl TrainConfig {
    pub fn new(loss: LossSpec, scenes: SceneConfig) -> Self {
        TrainConfig {
            loss,
            scenes,
            epochs: 50,
            initial_lr: 1e-2,
            weight_decay: 1e-4,
            eval_scenes: 8,
            tau: DEFAULT_TAU,
            final_eval_only: false,
        }
    }

    pub fn max_iter(&self) -> usize {
        self.epochs * self.scenes.n_scenes
    }

    pub fn num_classes(&self) -> usize {
        if self.scenes.multiclass {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.scenes.validate()?;
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::domain(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::domain(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.scenes.n_scenes == 0 {
            return Err(Error::domain("n_scenes must be positive"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::domain(format!("tau must be non-negative, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub epoch: usize,
    pub scene: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub iters: Vec<IterRecord>,
    /// Held-out panel after each epoch (only the last one with `final_eval_only`).
    pub epochs: Vec<MetricPanel>,
}

/// A scene with its feature stack computed once.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene: Scene,
    pub features: ScalarField,
}

impl Sample {
    pub fn new(scene: Scene) -> Result<Self> {
        let features = extract_features(&scene.image)?;
        Ok(Sample { scene, features })
    }
}

pub fn samples(cfg: &SceneConfig, indices: std::ops::Range<usize>) -> Result<Vec<Sample>> {
    indices.map(|k| Sample::new(gen_scene(cfg, k)?)).collect()
}

/// Mean held-out panel of `model` over `data`.
pub fn evaluate_model(model: &Model, data: &[Sample], tau: f64) -> Result<Option<MetricPanel>> {
    let panels = data
        .iter()
        .map(|s| panel(&model.predict(&s.features)?, &s.scene.labels, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricPanel::mean(&panels))
}

/// Dice of the predicted foreground against the small object, restricted to
/// the window around it; mean over scenes.
pub fn small_object_dice(model: &Model, data: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let pred = hard_argmax(&model.predict(&s.features)?);
        let region = s.scene.small_object_region();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for i in (0..pred.len()).filter(|&i| region.get(i)) {
            match (pred.data()[i] != 0, s.scene.small_object_mask.get(i)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let den = 2 * tp + fp + fn_;
        total += if den == 0 { 1.0 } else { 2.0 * tp as f64 / den as f64 };
    }
    Ok(if data.is_empty() { 1.0 } else { total / data.len() as f64 })
}

/// Trains on pre-built samples; `train` generates them from the config.
pub fn train_on(cfg: &TrainConfig, train_set: &[Sample], eval_set: &[Sample]) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let mut model = Model::zeros(NUM_FEATURES, cfg.num_classes());
    let mut state = AdamState::new(model.weights.len());
    let mut history = TrainHistory::default();
    let max_iter = cfg.epochs * train_set.len();
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        for (k, s) in train_set.iter().enumerate() {
            let lr = poly_lr(cfg.initial_lr, iter, max_iter);
            let (loss, grad) = loss_and_grad(&model, &cfg.loss, &s.features, &s.scene.labels)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { iter, value: loss });
            }
            adam_step(&mut model, &grad, &mut state, lr, cfg.weight_decay)?;
            history.iters.push(IterRecord { iter, epoch, scene: k, lr, loss });
            iter += 1;
        }
        if !cfg.final_eval_only || epoch + 1 == cfg.epochs {
            if let Some(p) = evaluate_model(&model, eval_set, cfg.tau)? {
                history.epochs.push(p);
            }
        }
    }
    Ok((model, history))
}

pub fn train(cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let n = cfg.scenes.n_scenes;
    let train_set = samples(&cfg.scenes, 0..n)?;
    let eval_set = samples(&cfg.scenes, n..n + cfg.eval_scenes)?;
    train_on(cfg, &train_set, &eval_set)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma_fg: f64,
    pub gamma_bg: f64,
    pub seed: u64,
    pub mdice: f64,
    pub miou: f64,
    pub mprec: f64,
    pub mrec: f64,
    pub mnsd: f64,
}

/// Trains `pm_dice` for every `(gamma_fg, gamma_bg)` pair and seed, rows
/// ordered pair-major. The loss in `base` is replaced; its epsilon is kept
/// when it is a Dice-family loss.
pub fn gamma_sweep(base: &TrainConfig, pairs: &[(f64, f64)], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if pairs.is_empty() || seeds.is_empty() {
        return Err(Error::domain("gamma_sweep needs at least one gamma pair and one seed"));
    }
    let epsilon = match &base.loss {
        LossSpec::Dice { epsilon } | LossSpec::PmDice { epsilon, .. } => *epsilon,
        _ => DEFAULT_EPSILON,
    };
    let cells: Vec<((f64, f64), u64)> = pairs.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    cells
        .par_iter()
        .map(|&((gamma_fg, gamma_bg), seed)| {
            let cfg = TrainConfig {
                loss: LossSpec::PmDice { gammas: ClassGammas::split(gamma_bg, gamma_fg), epsilon },
                scenes: SceneConfig { seed, ..base.scenes.clone() },
                final_eval_only: true,
                ..base.clone()
            };
            let (_, history) = train(&cfg)?;
            let fg = history.epochs.last().map(|p| p.foreground).ok_or_else(|| {
                Error::domain("gamma_sweep needs epochs > 0 and eval_scenes > 0")
            })?;
            Ok(SweepRow {
                gamma_fg,
                gamma_bg,
                seed,
                mdice: fg.dice,
                miou: fg.iou,
                mprec: fg.precision,
                mrec: fg.recall,
                mnsd: fg.nsd,
            })
        })
        .collect()
}
