use super::select::keep_hardest;
use super::LOG_CLAMP;
use crate::field::ScalarField;

/// Per-pixel cross entropy `-ln p_true` (clamped).
fn pixel_ce(p: &ScalarField, y: &ScalarField) -> Vec<f64> {
    let n = p.pixels();
    let mut out = vec![0.0; n];
    for c in 0..p.channels() {
        for (i, (pv, yv)) in p.channel(c).iter().zip(y.channel(c)).enumerate() {
            if *yv != 0.0 {
                out[i] -= yv * pv.max(LOG_CLAMP).ln();
            }
        }
    }
    out
}

pub(super) fn topk_selection(p: &ScalarField, y: &ScalarField, k_percent: f64) -> Vec<bool> {
    let mut cands: Vec<(usize, f64)> = pixel_ce(p, y).into_iter().enumerate().collect();
    let mut keep = vec![false; p.pixels()];
    keep_hardest(&mut cands, k_percent, &mut keep);
    keep
}

/// `-(1/N) sum_c sum_i (1 - p)^gamma y ln p`, optionally restricted to the
/// pixels in `keep` (normalization stays `1/N`). `gamma = 0` is plain cross
/// entropy since `powf(0)` is exactly one.
pub(super) fn focal(p: &ScalarField, y: &ScalarField, gamma: f64, keep: Option<&[bool]>) -> (f64, Vec<f64>) {
    let n = p.pixels();
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; p.data().len()];
    let mut total = 0.0;
    for c in 0..p.channels() {
        let base = c * n;
        for i in 0..n {
            let yv = y.data()[base + i];
            if yv == 0.0 || keep.is_some_and(|k| !k[i]) {
                continue;
            }
            let pv = p.data()[base + i];
            let q = 1.0 - pv;
            let log_p = pv.max(LOG_CLAMP).ln();
            let weight = q.powf(gamma);
            total -= weight * yv * log_p;

            // d/dp of -(q^gamma) ln p = gamma q^(gamma-1) ln p - q^gamma / p
            let dweight = if gamma == 0.0 || q == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            let dlog = if pv > LOG_CLAMP { 1.0 / pv } else { 0.0 };
            grad[base + i] = inv_n * yv * (dweight * log_p - weight * dlog);
        }
    }
    (total * inv_n, grad)
}
