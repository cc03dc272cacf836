//! Squared-denominator soft Dice and its weighted, resampled and pooled forms.
//!
//! Per present class `c` with per-pixel weights `w` (all ones for plain Dice):
//!
//! ```text
//! S_c = (2 sum w y p + eps) / (sum w (y^2 + p^2) + eps)
//! dS_c/dp_i = 2 w_i (y_i D - p_i N) / D^2
//! ```
//!
//! The weights never receive gradient.

use super::select::keep_hardest;
use super::{ClassGammas, LOG_CLAMP};
use crate::field::ScalarField;

/// `m = |y - p̂|^gamma_c`; `0^0 = 1`.
pub(super) fn modulating_field(p: &ScalarField, y: &ScalarField, gammas: &ClassGammas) -> Vec<f64> {
    let n = p.pixels();
    let mut m = vec![0.0; p.data().len()];
    for c in 0..p.channels() {
        let g = gammas.get(c);
        for ((out, pv), yv) in m[c * n..(c + 1) * n].iter_mut().zip(p.channel(c)).zip(y.channel(c)) {
            *out = (yv - pv).abs().powf(g);
        }
    }
    m
}

/// Keeps every positive of each class and the hardest `k_percent`% of its
/// negatives, ranked by `p̂`.
pub(super) fn hard_negative_mask(p: &ScalarField, y: &ScalarField, k_percent: f64) -> Vec<f64> {
    resample_mask(p, y, k_percent, false)
}

/// Keeps every negative of each class and the hardest `k_percent`% of its
/// positives, ranked by `1 - p̂`.
pub(super) fn hard_positive_mask(p: &ScalarField, y: &ScalarField, k_percent: f64) -> Vec<f64> {
    resample_mask(p, y, k_percent, true)
}

fn resample_mask(p: &ScalarField, y: &ScalarField, k_percent: f64, rank_positives: bool) -> Vec<f64> {
    let n = p.pixels();
    let mut mask = Vec::with_capacity(p.data().len());
    for c in 0..p.channels() {
        let (pc, yc) = (p.channel(c), y.channel(c));
        let mut keep: Vec<bool> = yc.iter().map(|&v| (v != 0.0) != rank_positives).collect();
        let mut cands: Vec<(usize, f64)> = (0..n)
            .filter(|&i| (yc[i] != 0.0) == rank_positives)
            .map(|i| (i, (yc[i] - pc[i]).abs()))
            .collect();
        keep_hardest(&mut cands, k_percent, &mut keep);
        mask.extend(keep.into_iter().map(|k| if k { 1.0 } else { 0.0 }));
    }
    mask
}

struct ClassTerms {
    num: f64,
    den: f64,
}

fn class_terms(pc: &[f64], yc: &[f64], wc: Option<&[f64]>, eps: f64) -> ClassTerms {
    let (mut inter, mut union) = (0.0, 0.0);
    match wc {
        None => {
            for (pv, yv) in pc.iter().zip(yc) {
                inter += yv * pv;
                union += yv * yv + pv * pv;
            }
        }
        Some(w) => {
            for ((pv, yv), wv) in pc.iter().zip(yc).zip(w) {
                inter += wv * yv * pv;
                union += wv * (yv * yv + pv * pv);
            }
        }
    }
    ClassTerms { num: 2.0 * inter + eps, den: union + eps }
}

fn is_present(yc: &[f64]) -> bool {
    yc.iter().any(|&v| v != 0.0)
}

/// Per-class Dice scores `S_c` (None for classes absent from the ground truth).
pub(super) fn class_scores(p: &ScalarField, y: &ScalarField, weights: Option<&[f64]>, eps: f64) -> Vec<Option<f64>> {
    let n = p.pixels();
    (0..p.channels())
        .map(|c| {
            let yc = y.channel(c);
            is_present(yc).then(|| {
                let t = class_terms(p.channel(c), yc, weights.map(|w| &w[c * n..(c + 1) * n]), eps);
                t.num / t.den
            })
        })
        .collect()
}

/// `1 - mean S_c` or, with `log`, `mean -ln S_c`, over present classes.
pub(super) fn averaged(
    p: &ScalarField,
    y: &ScalarField,
    weights: Option<&[f64]>,
    eps: f64,
    log: bool,
) -> (f64, Vec<f64>) {
    let n = p.pixels();
    let present: Vec<usize> = (0..p.channels()).filter(|&c| is_present(y.channel(c))).collect();
    let inv_c = 1.0 / present.len() as f64;
    let mut grad = vec![0.0; p.data().len()];
    let mut score_sum = 0.0;
    let mut log_sum = 0.0;
    for &c in &present {
        let (pc, yc) = (p.channel(c), y.channel(c));
        let wc = weights.map(|w| &w[c * n..(c + 1) * n]);
        let ClassTerms { num, den } = class_terms(pc, yc, wc, eps);
        let score = num / den;
        score_sum += score;

        // dL/dS_c
        let outer = if log {
            log_sum -= score.max(LOG_CLAMP).ln();
            if score > LOG_CLAMP {
                -inv_c / score
            } else {
                0.0
            }
        } else {
            -inv_c
        };
        let scale = outer * 2.0 / (den * den);
        let g = &mut grad[c * n..(c + 1) * n];
        for i in 0..n {
            let w = wc.map_or(1.0, |w| w[i]);
            g[i] = scale * w * (yc[i] * den - pc[i] * num);
        }
    }
    let value = if log { log_sum * inv_c } else { 1.0 - score_sum * inv_c };
    (value, grad)
}

/// Single pooled fraction with class weights `1 / (sum_i y_i^c)^2` over
/// present classes.
pub(super) fn generalized(p: &ScalarField, y: &ScalarField, eps: f64) -> (f64, Vec<f64>) {
    let n = p.pixels();
    let weights: Vec<f64> = (0..p.channels())
        .map(|c| {
            let area: f64 = y.channel(c).iter().sum();
            if area > 0.0 {
                1.0 / (area * area)
            } else {
                0.0
            }
        })
        .collect();
    let (mut inter, mut union) = (0.0, 0.0);
    for (c, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (mut ic, mut uc) = (0.0, 0.0);
        for (pv, yv) in p.channel(c).iter().zip(y.channel(c)) {
            ic += yv * pv;
            uc += yv * yv + pv * pv;
        }
        inter += w * ic;
        union += w * uc;
    }
    let num = 2.0 * inter + eps;
    let den = union + eps;
    let mut grad = vec![0.0; p.data().len()];
    for (c, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let scale = -2.0 * w / (den * den);
        for (i, g) in grad[c * n..(c + 1) * n].iter_mut().enumerate() {
            *g = scale * (y.at(c, i) * den - p.at(c, i) * num);
        }
    }
    (1.0 - num / den, grad)
}
