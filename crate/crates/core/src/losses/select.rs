//! Top-K hard-example selection shared by the resampled losses.

/// Number of candidates kept at `k_percent`: `ceil(K/100 * n)`, at least one
/// when there is any candidate.
pub fn retained_count(k_percent: f64, candidates: usize) -> usize {
    if candidates == 0 {
        return 0;
    }
    // K * n is formed first so integral percentages of integral counts are exact.
    let raw = k_percent * candidates as f64 / 100.0;
    let count = (raw - 1e-9).ceil().max(1.0) as usize;
    count.min(candidates)
}

/// Marks the `retained_count(k_percent, candidates.len())` candidates with
/// the largest error. Ties go to the lower pixel index.
pub(super) fn keep_hardest(candidates: &mut [(usize, f64)], k_percent: f64, keep: &mut [bool]) {
    let count = retained_count(k_percent, candidates.len());
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in &candidates[..count] {
        keep[i] = true;
    }
}
