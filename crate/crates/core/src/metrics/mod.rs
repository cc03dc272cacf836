//! Evaluation panel: per-class Dice, IoU, precision, recall and NSD plus
//! foreground means. Class 0 is the background and is left out of the means.

mod surface;

use serde::Serialize;

pub use surface::{
    distance_band, extract_boundary, nsd, squared_distance_transform, Band, BoundarySet, Mask,
};

use crate::error::{Error, Result};
use crate::field::{LabelField, ScalarField};

/// Default NSD tolerance in pixels.
pub const DEFAULT_TAU: f64 = 2.0;

/// Per-pixel argmax over channels; ties go to the lowest class.
pub fn hard_argmax(probs: &ScalarField) -> LabelField {
    let (c, n) = (probs.channels(), probs.pixels());
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if probs.at(k, i) > probs.at(best, i) {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    LabelField::new(probs.spatial_dims().to_vec(), labels).expect("dims come from a valid field")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// One-vs-rest confusion counts, indexed by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts(pub Vec<ClassCounts>);

pub fn confusion(pred: &LabelField, truth: &LabelField, num_classes: usize) -> Result<ConfusionCounts> {
    if pred.dims() != truth.dims() {
        return Err(Error::domain(format!(
            "confusion: prediction dims {:?} differ from truth dims {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    pred.check_classes(num_classes)?;
    truth.check_classes(num_classes)?;
    let mut counts = vec![ClassCounts::default(); num_classes];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        for (c, k) in counts.iter_mut().enumerate() {
            match (p as usize == c, t as usize == c) {
                (true, true) => k.tp += 1,
                (true, false) => k.fp += 1,
                (false, true) => k.fn_ += 1,
                (false, false) => k.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts(counts))
}

/// Scores of one class, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub nsd: f64,
}

/// `num / den`, reading 0/0 as 1: a class absent from both prediction and
/// truth is perfectly handled.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Dice, IoU, precision and recall from confusion counts; NSD left at 1.0
/// until [`panel`] fills it in.
pub fn overlap_metrics(counts: &ConfusionCounts) -> Vec<ClassMetrics> {
    counts
        .0
        .iter()
        .map(|k| ClassMetrics {
            dice: ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn_),
            iou: ratio(k.tp, k.tp + k.fp + k.fn_),
            precision: ratio(k.tp, k.tp + k.fp),
            recall: ratio(k.tp, k.tp + k.fn_),
            nsd: 1.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricPanel {
    pub classes: Vec<ClassMetrics>,
    /// Mean over classes 1..C.
    pub foreground: ClassMetrics,
    pub counts: Vec<ClassCounts>,
}

impl MetricPanel {
    pub fn mdice(&self) -> f64 {
        self.foreground.dice
    }

    /// Entry-wise mean of several panels, in the order given.
    pub fn mean(panels: &[MetricPanel]) -> Option<MetricPanel> {
        let first = panels.first()?;
        let k = panels.len() as f64;
        let avg = |get: &dyn Fn(&MetricPanel) -> ClassMetrics| {
            let mut acc = ClassMetrics { dice: 0.0, iou: 0.0, precision: 0.0, recall: 0.0, nsd: 0.0 };
            for p in panels {
                let m = get(p);
                acc.dice += m.dice;
                acc.iou += m.iou;
                acc.precision += m.precision;
                acc.recall += m.recall;
                acc.nsd += m.nsd;
            }
            ClassMetrics {
                dice: acc.dice / k,
                iou: acc.iou / k,
                precision: acc.precision / k,
                recall: acc.recall / k,
                nsd: acc.nsd / k,
            }
        };
        let classes = (0..first.classes.len()).map(|c| avg(&|p| p.classes[c])).collect();
        let foreground = avg(&|p| p.foreground);
        let mut counts = vec![ClassCounts::default(); first.counts.len()];
        for p in panels {
            for (acc, k) in counts.iter_mut().zip(&p.counts) {
                acc.tp += k.tp;
                acc.fp += k.fp;
                acc.fn_ += k.fn_;
                acc.tn += k.tn;
            }
        }
        Some(MetricPanel { classes, foreground, counts })
    }
}

/// Full panel from hard label maps.
pub fn panel_from_labels(pred: &LabelField, truth: &LabelField, num_classes: usize, tau: f64) -> Result<MetricPanel> {
    if num_classes < 2 {
        return Err(Error::domain(format!("panel needs at least 2 classes, got {num_classes}")));
    }
    let counts = confusion(pred, truth, num_classes)?;
    let mut classes = overlap_metrics(&counts);
    for (c, m) in classes.iter_mut().enumerate() {
        let dims = pred.dims().to_vec();
        let pm = Mask::new(dims.clone(), pred.mask(c as u32))?;
        let tm = Mask::new(dims, truth.mask(c as u32))?;
        m.nsd = nsd(&pm, &tm, tau)?;
    }
    let fg = &classes[1..];
    let k = fg.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| fg.iter().map(f).sum::<f64>() / k;
    let foreground = ClassMetrics {
        dice: mean(|m| m.dice),
        iou: mean(|m| m.iou),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        nsd: mean(|m| m.nsd),
    };
    Ok(MetricPanel { classes, foreground, counts: counts.0 })
}

/// Panel of a probability field against ground truth: argmax, confusion,
/// overlap metrics and per-class NSD.
pub fn panel(probs: &ScalarField, truth: &LabelField, tau: f64) -> Result<MetricPanel> {
    probs.require_class_field("panel")?;
    if probs.spatial_dims() != truth.dims() {
        return Err(Error::domain(format!(
            "panel: probability spatial dims {:?} differ from truth dims {:?}",
            probs.spatial_dims(),
            truth.dims()
        )));
    }
    panel_from_labels(&hard_argmax(probs), truth, probs.channels(), tau)
}
