//! Segmentation losses evaluated on probability fields, each returning its
//! value together with the analytic gradient `dL/dp`.
//!
//! Some losses depend on quantities that are computed from the prediction but
//! excluded from differentiation: the modulating field of [`LossSpec::PmDice`]
//! and the hard-pixel selections of the top-K variants. These live in a
//! [`Frozen`] value produced by [`LossSpec::freeze`] from a snapshot of the
//! probabilities. [`LossSpec::evaluate_frozen`] treats it as a constant, which
//! is what lets a finite-difference oracle perturb `p` while holding the
//! snapshot fixed.

mod ce;
mod dice;
mod select;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{one_hot, LabelField, ScalarField};

pub use select::retained_count;

/// Per-class Dice scores of the squared-denominator form; `None` marks a
/// class absent from the ground truth.
pub fn dice_class_scores(probs: &ScalarField, labels: &LabelField, epsilon: f64) -> Result<Vec<Option<f64>>> {
    let y = check_inputs(probs, labels)?;
    Ok(dice::class_scores(probs, &y, None, epsilon))
}

/// Smoothing term of the Dice family.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Lower clamp applied before every logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ce,
    FocalCe,
    TopkCe,
    Dice,
    PmDice,
    GeneralizedDice,
    LogDice,
    FocalDiceTn,
    TopkDicePos,
    Compound,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::Ce,
        LossKind::FocalCe,
        LossKind::TopkCe,
        LossKind::Dice,
        LossKind::PmDice,
        LossKind::GeneralizedDice,
        LossKind::LogDice,
        LossKind::FocalDiceTn,
        LossKind::TopkDicePos,
        LossKind::Compound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::FocalCe => "focal_ce",
            LossKind::TopkCe => "topk_ce",
            LossKind::Dice => "dice",
            LossKind::PmDice => "pm_dice",
            LossKind::GeneralizedDice => "generalized_dice",
            LossKind::LogDice => "log_dice",
            LossKind::FocalDiceTn => "focal_dice_tn",
            LossKind::TopkDicePos => "topk_dice_pos",
            LossKind::Compound => "compound",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown loss kind `{s}`")))
    }
}

/// Focusing parameters of the modulated Dice loss: one default plus
/// per-class overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGammas {
    pub default: f64,
    pub overrides: BTreeMap<usize, f64>,
}

impl ClassGammas {
    pub fn uniform(gamma: f64) -> Self {
        ClassGammas { default: gamma, overrides: BTreeMap::new() }
    }

    /// Background (class 0) and every foreground class.
    pub fn split(gamma_bg: f64, gamma_fg: f64) -> Self {
        ClassGammas { default: gamma_fg, overrides: BTreeMap::from([(0, gamma_bg)]) }
    }

    pub fn with(mut self, class: usize, gamma: f64) -> Self {
        self.overrides.insert(class, gamma);
        self
    }

    pub fn get(&self, class: usize) -> f64 {
        self.overrides.get(&class).copied().unwrap_or(self.default)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.default).chain(self.overrides.values().copied())
    }
}

impl Default for ClassGammas {
    fn default() -> Self {
        ClassGammas::uniform(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// Mean cross entropy over all pixels.
    Ce,
    /// Cross entropy scaled by `(1 - p)^gamma`.
    FocalCe { gamma: f64 },
    /// Cross entropy over the `k_percent`% highest-loss pixels, still
    /// normalized by the total pixel count.
    TopkCe { k_percent: f64 },
    /// Soft Dice with squared denominator, averaged over present classes.
    Dice { epsilon: f64 },
    /// Dice with each pixel weighted by `|y - p̂|^gamma_c`, `p̂` detached.
    PmDice { gammas: ClassGammas, epsilon: f64 },
    /// One pooled Dice fraction with weights `1 / area_c^2`.
    GeneralizedDice { epsilon: f64 },
    /// Mean of `-ln(S_c)` over present classes.
    LogDice { epsilon: f64 },
    /// Dice keeping all positives and only the hardest `k_percent`% negatives per class.
    FocalDiceTn { k_percent: f64, epsilon: f64 },
    /// Dice keeping all negatives and only the hardest `k_percent`% positives per class.
    TopkDicePos { k_percent: f64, epsilon: f64 },
    /// `w1 * first + w2 * second`.
    Compound { first: Box<LossSpec>, second: Box<LossSpec>, weights: (f64, f64) },
}

/// Optional overrides applied on top of a kind's defaults.
#[derive(Debug, Clone, Default)]
pub struct LossParams {
    pub gamma: Option<f64>,
    pub gamma_class: Vec<(usize, f64)>,
    pub k_percent: Option<f64>,
    pub epsilon: Option<f64>,
}

impl LossSpec {
    pub fn dice() -> Self {
        LossSpec::Dice { epsilon: DEFAULT_EPSILON }
    }

    pub fn pm_dice(gamma: f64) -> Self {
        LossSpec::PmDice { gammas: ClassGammas::uniform(gamma), epsilon: DEFAULT_EPSILON }
    }

    pub fn compound(first: LossSpec, second: LossSpec, w1: f64, w2: f64) -> Self {
        LossSpec::Compound { first: Box::new(first), second: Box::new(second), weights: (w1, w2) }
    }

    /// Spec for `kind` with its defaults (compound defaults to `ce + dice`).
    pub fn default_for(kind: LossKind) -> Self {
        let epsilon = DEFAULT_EPSILON;
        match kind {
            LossKind::Ce => LossSpec::Ce,
            LossKind::FocalCe => LossSpec::FocalCe { gamma: 2.0 },
            LossKind::TopkCe => LossSpec::TopkCe { k_percent: 10.0 },
            LossKind::Dice => LossSpec::Dice { epsilon },
            LossKind::PmDice => LossSpec::PmDice { gammas: ClassGammas::default(), epsilon },
            LossKind::GeneralizedDice => LossSpec::GeneralizedDice { epsilon },
            LossKind::LogDice => LossSpec::LogDice { epsilon },
            LossKind::FocalDiceTn => LossSpec::FocalDiceTn { k_percent: 100.0, epsilon },
            LossKind::TopkDicePos => LossSpec::TopkDicePos { k_percent: 100.0, epsilon },
            LossKind::Compound => LossSpec::compound(LossSpec::Ce, LossSpec::dice(), 1.0, 1.0),
        }
    }

    /// Defaults for `kind` with `params` applied where the kind uses them.
    /// Parameters a kind has no use for are ignored.
    pub fn build(kind: LossKind, params: &LossParams) -> Result<Self> {
        let mut spec = LossSpec::default_for(kind);
        match &mut spec {
            LossSpec::Ce | LossSpec::Compound { .. } => {}
            LossSpec::FocalCe { gamma } => {
                if let Some(g) = params.gamma {
                    *gamma = g;
                }
            }
            LossSpec::TopkCe { k_percent } => {
                if let Some(k) = params.k_percent {
                    *k_percent = k;
                }
            }
            LossSpec::Dice { epsilon }
            | LossSpec::GeneralizedDice { epsilon }
            | LossSpec::LogDice { epsilon } => {
                if let Some(e) = params.epsilon {
                    *epsilon = e;
                }
            }
            LossSpec::PmDice { gammas, epsilon } => {
                if let Some(g) = params.gamma {
                    gammas.default = g;
                }
                for &(c, g) in &params.gamma_class {
                    gammas.overrides.insert(c, g);
                }
                if let Some(e) = params.epsilon {
                    *epsilon = e;
                }
            }
            LossSpec::FocalDiceTn { k_percent, epsilon }
            | LossSpec::TopkDicePos { k_percent, epsilon } => {
                if let Some(k) = params.k_percent {
                    *k_percent = k;
                }
                if let Some(e) = params.epsilon {
                    *epsilon = e;
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossSpec::Ce => LossKind::Ce,
            LossSpec::FocalCe { .. } => LossKind::FocalCe,
            LossSpec::TopkCe { .. } => LossKind::TopkCe,
            LossSpec::Dice { .. } => LossKind::Dice,
            LossSpec::PmDice { .. } => LossKind::PmDice,
            LossSpec::GeneralizedDice { .. } => LossKind::GeneralizedDice,
            LossSpec::LogDice { .. } => LossKind::LogDice,
            LossSpec::FocalDiceTn { .. } => LossKind::FocalDiceTn,
            LossSpec::TopkDicePos { .. } => LossKind::TopkDicePos,
            LossSpec::Compound { .. } => LossKind::Compound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gamma_ok = |g: f64| g.is_finite() && g >= 0.0;
        let k_ok = |k: f64| k > 0.0 && k <= 100.0;
        let eps_ok = |e: f64| e.is_finite() && e > 0.0;
        let bad = |what: &str, v: f64| Err(Error::domain(format!("{}: invalid {what} {v}", self.kind())));
        match self {
            LossSpec::Ce => Ok(()),
            LossSpec::FocalCe { gamma } if !gamma_ok(*gamma) => bad("gamma", *gamma),
            LossSpec::TopkCe { k_percent } if !k_ok(*k_percent) => bad("K", *k_percent),
            LossSpec::FocalCe { .. } | LossSpec::TopkCe { .. } => Ok(()),
            LossSpec::Dice { epsilon }
            | LossSpec::GeneralizedDice { epsilon }
            | LossSpec::LogDice { epsilon }
                if !eps_ok(*epsilon) =>
            {
                bad("epsilon", *epsilon)
            }
            LossSpec::Dice { .. } | LossSpec::GeneralizedDice { .. } | LossSpec::LogDice { .. } => Ok(()),
            LossSpec::PmDice { gammas, epsilon } => {
                if let Some(g) = gammas.values().find(|&g| !gamma_ok(g)) {
                    bad("gamma", g)
                } else if !eps_ok(*epsilon) {
                    bad("epsilon", *epsilon)
                } else {
                    Ok(())
                }
            }
            LossSpec::FocalDiceTn { k_percent, epsilon }
            | LossSpec::TopkDicePos { k_percent, epsilon } => {
                if !k_ok(*k_percent) {
                    bad("K", *k_percent)
                } else if !eps_ok(*epsilon) {
                    bad("epsilon", *epsilon)
                } else {
                    Ok(())
                }
            }
            LossSpec::Compound { first, second, weights } => {
                if matches!(**first, LossSpec::Compound { .. }) || matches!(**second, LossSpec::Compound { .. }) {
                    return Err(Error::domain("compound: children must not be compound"));
                }
                if !weights.0.is_finite() || !weights.1.is_finite() {
                    return Err(Error::domain(format!("compound: invalid weights {weights:?}")));
                }
                first.validate()?;
                second.validate()
            }
        }
    }

    /// Computes every non-differentiated quantity from the snapshot `probs`.
    pub fn freeze(&self, probs: &ScalarField, labels: &LabelField) -> Result<Frozen> {
        let y = check_inputs(probs, labels)?;
        Ok(self.freeze_checked(probs, &y))
    }

    fn freeze_checked(&self, probs: &ScalarField, y: &ScalarField) -> Frozen {
        match self {
            LossSpec::TopkCe { k_percent } => Frozen::Pixels(ce::topk_selection(probs, y, *k_percent)),
            LossSpec::PmDice { gammas, .. } => Frozen::Weights(dice::modulating_field(probs, y, gammas)),
            LossSpec::FocalDiceTn { k_percent, .. } => {
                Frozen::Weights(dice::hard_negative_mask(probs, y, *k_percent))
            }
            LossSpec::TopkDicePos { k_percent, .. } => {
                Frozen::Weights(dice::hard_positive_mask(probs, y, *k_percent))
            }
            LossSpec::Compound { first, second, .. } => Frozen::Pair(
                Box::new(first.freeze_checked(probs, y)),
                Box::new(second.freeze_checked(probs, y)),
            ),
            _ => Frozen::Nothing,
        }
    }

    /// Loss and gradient with the snapshot held fixed.
    pub fn evaluate_frozen(
        &self,
        probs: &ScalarField,
        labels: &LabelField,
        frozen: &Frozen,
    ) -> Result<LossResult> {
        let y = check_inputs(probs, labels)?;
        self.validate()?;
        self.evaluate_checked(probs, &y, frozen)
    }

    /// Loss and gradient, freezing on `probs` itself.
    pub fn evaluate(&self, probs: &ScalarField, labels: &LabelField) -> Result<LossResult> {
        let y = check_inputs(probs, labels)?;
        self.validate()?;
        let frozen = self.freeze_checked(probs, &y);
        self.evaluate_checked(probs, &y, &frozen)
    }

    fn evaluate_checked(&self, p: &ScalarField, y: &ScalarField, frozen: &Frozen) -> Result<LossResult> {
        let mismatch = || Error::domain(format!("{}: frozen state does not match the loss", self.kind()));
        let weights = |len: usize| match frozen {
            Frozen::Weights(w) if w.len() == len => Ok(w.as_slice()),
            _ => Err(mismatch()),
        };
        let (value, grad) = match self {
            LossSpec::Ce => ce::focal(p, y, 0.0, None),
            LossSpec::FocalCe { gamma } => ce::focal(p, y, *gamma, None),
            LossSpec::TopkCe { .. } => match frozen {
                Frozen::Pixels(keep) if keep.len() == p.pixels() => ce::focal(p, y, 0.0, Some(keep)),
                _ => return Err(mismatch()),
            },
            LossSpec::Dice { epsilon } => dice::averaged(p, y, None, *epsilon, false),
            LossSpec::LogDice { epsilon } => dice::averaged(p, y, None, *epsilon, true),
            LossSpec::PmDice { epsilon, .. }
            | LossSpec::FocalDiceTn { epsilon, .. }
            | LossSpec::TopkDicePos { epsilon, .. } => {
                dice::averaged(p, y, Some(weights(p.data().len())?), *epsilon, false)
            }
            LossSpec::GeneralizedDice { epsilon } => dice::generalized(p, y, *epsilon),
            LossSpec::Compound { first, second, weights: (w1, w2) } => {
                let Frozen::Pair(f1, f2) = frozen else { return Err(mismatch()) };
                let a = first.evaluate_checked(p, y, f1)?;
                let b = second.evaluate_checked(p, y, f2)?;
                let grad = a.grad.data().iter().zip(b.grad.data()).map(|(ga, gb)| w1 * ga + w2 * gb).collect();
                (w1 * a.value + w2 * b.value, grad)
            }
        };
        Ok(LossResult { value, grad: ScalarField::from_parts(p.dims().to_vec(), grad) })
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Compound { first, second, weights } => {
                write!(f, "{}*{} + {}*{}", weights.0, first, weights.1, second)
            }
            other => f.write_str(other.kind().name()),
        }
    }
}

/// Non-differentiated state captured from a probability snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum Frozen {
    Nothing,
    /// Channel-major per-pixel weights: the modulating field, or a 0/1
    /// retention mask for the resampled Dice variants.
    Weights(Vec<f64>),
    /// Retained pixels of a top-K cross entropy.
    Pixels(Vec<bool>),
    Pair(Box<Frozen>, Box<Frozen>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `dL/dp`, same dims as the probabilities.
    pub grad: ScalarField,
}

/// Free-function form of [`LossSpec::evaluate`].
pub fn evaluate(spec: &LossSpec, probs: &ScalarField, labels: &LabelField) -> Result<LossResult> {
    spec.evaluate(probs, labels)
}

fn check_inputs(probs: &ScalarField, labels: &LabelField) -> Result<ScalarField> {
    probs.require_class_field("loss")?;
    let c = probs.channels();
    if c < 2 {
        return Err(Error::domain(format!("loss needs at least 2 classes, got {c}")));
    }
    if probs.spatial_dims() != labels.dims() {
        return Err(Error::domain(format!(
            "probability spatial dims {:?} differ from label dims {:?}",
            probs.spatial_dims(),
            labels.dims()
        )));
    }
    if let Some(i) = probs.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::domain(format!("probability {} at index {i} outside [0, 1]", probs.data()[i])));
    }
    one_hot(labels, c)
}
