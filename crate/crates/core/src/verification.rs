//! Independent oracles: central finite differences for loss gradients and an
//! all-pairs NSD.
//!
//! With `freeze_modulation` set, the modulating field and any top-K masks are
//! captured once from the unperturbed probabilities and reused for every
//! perturbed evaluation. Without it each perturbed evaluation re-derives them,
//! which is what differentiating through the modulating term would compute.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{softmax, LabelField, Rng, ScalarField};
use crate::losses::LossSpec;
use crate::metrics::Mask;

pub const DEFAULT_STEP: f64 = 1e-6;
/// Absolute floor on the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;
/// Floor on the relative-error denominator as a fraction of the largest
/// analytic gradient component. Central differences at `h = 1e-6` cannot
/// resolve components much below `1e-10`, so coordinates that small are
/// compared against the field's own scale instead.
pub const SCALE_FLOOR: f64 = 1e-3;
/// Pass threshold for gradient checks.
pub const REL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct FdGradient {
    pub grad: ScalarField,
    /// Coordinates whose stencil was clipped to [0, 1].
    pub clipped: usize,
}

/// Central differences `(L(p + h e) - L(p - h e)) / 2h` over every
/// probability coordinate, without renormalizing the per-pixel simplex.
pub fn finite_diff_grad(
    spec: &LossSpec,
    probs: &ScalarField,
    labels: &LabelField,
    h: f64,
    freeze_modulation: bool,
) -> Result<FdGradient> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {h}")));
    }
    let frozen = spec.freeze(probs, labels)?;
    let loss = |p: &ScalarField| -> Result<f64> {
        if freeze_modulation {
            Ok(spec.evaluate_frozen(p, labels, &frozen)?.value)
        } else {
            Ok(spec.evaluate(p, labels)?.value)
        }
    };
    let mut work = probs.clone();
    let mut grad = vec![0.0; probs.data().len()];
    let mut clipped = 0;
    for (j, g) in grad.iter_mut().enumerate() {
        let x = probs.data()[j];
        if x + h > 1.0 || x - h < 0.0 {
            clipped += 1;
        }
        let hi = (x + h).min(1.0);
        let lo = (x - h).max(0.0);
        work.data_mut()[j] = hi;
        let up = loss(&work)?;
        work.data_mut()[j] = lo;
        let down = loss(&work)?;
        work.data_mut()[j] = x;
        *g = (up - down) / (hi - lo);
    }
    Ok(FdGradient { grad: ScalarField::new(probs.dims().to_vec(), grad)?, clipped })
}

/// Central differences of an arbitrary scalar function.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|j| {
            work[j] = x[j] + h;
            let up = f(&work);
            work[j] = x[j] - h;
            let down = f(&work);
            work[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradReport {
    pub max_abs_error: f64,
    /// Relative error with the scale-aware floor; the pass criterion.
    pub max_rel_error: f64,
    /// Relative error with only the absolute floor, for reference.
    pub max_coord_rel_error: f64,
    /// (class, flattened pixel) of the worst relative error.
    pub worst_class: usize,
    pub worst_pixel: usize,
    pub step: f64,
    pub clipped: usize,
    pub trials: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }

    fn merge(self, other: GradReport) -> GradReport {
        let worst = if other.max_rel_error > self.max_rel_error { other } else { self };
        GradReport {
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            max_coord_rel_error: self.max_coord_rel_error.max(other.max_coord_rel_error),
            clipped: self.clipped + other.clipped,
            trials: self.trials + other.trials,
            ..worst
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst-case comparison of two gradient fields.
pub fn compare(analytic: &ScalarField, numeric: &ScalarField, step: f64) -> Result<GradReport> {
    if analytic.dims() != numeric.dims() {
        return Err(Error::domain("compare: gradient dims differ"));
    }
    let n = analytic.pixels();
    let scale = analytic.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = REL_FLOOR.max(SCALE_FLOOR * scale);
    let mut report = GradReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        max_coord_rel_error: 0.0,
        worst_class: 0,
        worst_pixel: 0,
        step,
        clipped: 0,
        trials: 1,
    };
    for (j, (&a, &b)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        report.max_abs_error = report.max_abs_error.max((a - b).abs());
        report.max_coord_rel_error = report.max_coord_rel_error.max(relative_error(a, b, REL_FLOOR));
        let rel = relative_error(a, b, floor);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_class = j / n;
            report.worst_pixel = j % n;
        }
    }
    Ok(report)
}

/// Analytic gradient of `spec` against finite differences on one instance.
pub fn check_instance(
    spec: &LossSpec,
    probs: &ScalarField,
    labels: &LabelField,
    h: f64,
    freeze_modulation: bool,
) -> Result<GradReport> {
    let analytic = spec.evaluate(probs, labels)?;
    let fd = finite_diff_grad(spec, probs, labels, h, freeze_modulation)?;
    let mut report = compare(&analytic.grad, &fd.grad, h)?;
    report.clipped = fd.clipped;
    Ok(report)
}

/// Random instance: `C` in {2,3,4}, spatial extents in 2..=8, probabilities
/// from softmax of standard-normal logits, uniform labels.
pub fn random_instance(rng: &mut Rng) -> (ScalarField, LabelField) {
    let c = rng.int_in(2, 4);
    let h = rng.int_in(2, 8);
    let w = rng.int_in(2, 8);
    let logits: Vec<f64> = (0..c * h * w).map(|_| rng.normal()).collect();
    let probs = softmax(&ScalarField::from_parts(vec![c, h, w], logits)).expect("finite logits");
    let labels = (0..h * w).map(|_| rng.int_in(0, c - 1) as u32).collect();
    (probs, LabelField::new(vec![h, w], labels).expect("consistent dims"))
}

/// Worst case over `n_trials` seeded random instances at step `h`.
pub fn grad_check_with(spec: &LossSpec, n_trials: usize, seed: u64, h: f64, freeze_modulation: bool) -> Result<GradReport> {
    if n_trials == 0 {
        return Err(Error::domain("grad_check needs at least one trial"));
    }
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut total: Option<GradReport> = None;
    for _ in 0..n_trials {
        let (probs, labels) = random_instance(&mut rng);
        let r = check_instance(spec, &probs, &labels, h, freeze_modulation)?;
        total = Some(match total {
            None => r,
            Some(t) => t.merge(r),
        });
    }
    Ok(total.expect("at least one trial"))
}

pub fn grad_check(spec: &LossSpec, n_trials: usize, seed: u64) -> Result<GradReport> {
    grad_check_with(spec, n_trials, seed, DEFAULT_STEP, true)
}

/// Fixed instance on which differentiating through the modulating term
/// visibly changes the gradient: the four-pixel binary case with
/// fg y = [1,1,0,0], fg p = [0.9,0.6,0.1,0.4], and `pm_dice` at gamma = 1.
pub fn detach_witness() -> (LossSpec, ScalarField, LabelField) {
    let probs = ScalarField::from_parts(vec![2, 1, 4], vec![0.1, 0.4, 0.9, 0.6, 0.9, 0.6, 0.1, 0.4]);
    let labels = LabelField::new(vec![1, 4], vec![1, 1, 0, 0]).expect("consistent dims");
    (LossSpec::pm_dice(1.0), probs, labels)
}

/// NSD by explicit all-pairs distances between boundary pixels. Quadratic in
/// the boundary size; meant for masks up to about 32x32.
pub fn brute_nsd(pred: &Mask, truth: &Mask, tau: f64) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::domain("brute_nsd: mask dims differ"));
    }
    let sp = border_coords(pred);
    let sy = border_coords(truth);
    if sp.is_empty() && sy.is_empty() {
        return Ok(1.0);
    }
    let dist = |a: &[i64], b: &[i64]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| ((x - y) * (x - y)) as f64).sum::<f64>().sqrt()
    };
    let near = |pt: &[i64], set: &[Vec<i64>]| set.iter().any(|q| dist(pt, q) <= tau);
    let hits = sy.iter().filter(|pt| near(pt, &sp)).count() + sp.iter().filter(|pt| near(pt, &sy)).count();
    Ok(hits as f64 / (sp.len() + sy.len()) as f64)
}

/// Coordinates of mask pixels with a face neighbour outside the mask or
/// outside the grid.
fn border_coords(mask: &Mask) -> Vec<Vec<i64>> {
    let dims: Vec<i64> = mask.dims().iter().map(|&d| d as i64).collect();
    let coord_of = |mut i: usize| {
        let mut c = vec![0i64; dims.len()];
        for a in (0..dims.len()).rev() {
            c[a] = i as i64 % dims[a];
            i /= dims[a] as usize;
        }
        c
    };
    let inside = |c: &[i64]| -> bool {
        if c.iter().zip(&dims).any(|(&x, &d)| x < 0 || x >= d) {
            return false;
        }
        let idx = c.iter().zip(&dims).fold(0i64, |acc, (&x, &d)| acc * d + x);
        mask.get(idx as usize)
    };
    (0..mask.data().len())
        .filter(|&i| mask.get(i))
        .map(coord_of)
        .filter(|c| {
            (0..dims.len()).any(|a| {
                [-1i64, 1].iter().any(|&step| {
                    let mut nb = c.clone();
                    nb[a] += step;
                    !inside(&nb)
                })
            })
        })
        .collect()
}
