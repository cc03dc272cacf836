//! Dense channel-major fields over a 2D or 3D pixel grid.
//!
//! A [`ScalarField`] with dims `[C, H, W]` (or `[C, D, H, W]`) stores channel
//! `c` as one contiguous run of `H * W` values, so every per-class reduction is
//! a linear scan over a flattened pixel index. Nothing below depends on the
//! spatial rank; volumes go through the same code as images.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl ScalarField {
    /// Checked constructor: every extent positive, `data.len()` equal to the
    /// product of `dims`, every value finite.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::domain(format!("extents must be positive, got {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::domain(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value {} at index {i}", data[i])));
        }
        Ok(ScalarField { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        ScalarField { dims, data: vec![0.0; len] }
    }

    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        ScalarField { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Leading (class) extent.
    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    pub fn spatial_dims(&self) -> &[usize] {
        &self.dims[1..]
    }

    /// Pixels per channel.
    pub fn pixels(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Value of channel `c` at flattened pixel `i`.
    #[inline]
    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.data[c * self.pixels() + i]
    }

    pub(crate) fn require_class_field(&self, what: &str) -> Result<()> {
        match self.dims.len() {
            3 | 4 => Ok(()),
            r => Err(Error::domain(format!(
                "{what}: expected dims C x spatial with spatial rank 2 or 3, got rank {r}"
            ))),
        }
    }
}

/// Ground-truth class index per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    dims: Vec<usize>,
    data: Vec<u32>,
}

impl LabelField {
    pub fn new(dims: Vec<usize>, data: Vec<u32>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::domain(format!("extents must be positive, got {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::domain(format!(
                "dims {dims:?} need {len} labels, got {}",
                data.len()
            )));
        }
        Ok(LabelField { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Largest class index present, plus one.
    pub fn min_classes(&self) -> usize {
        self.data.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Binary mask of pixels labelled `class`.
    pub fn mask(&self, class: u32) -> Vec<bool> {
        self.data.iter().map(|&l| l == class).collect()
    }

    pub(crate) fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().position(|&l| l as usize >= num_classes) {
            Some(i) => Err(Error::domain(format!(
                "label {} at pixel {i} is out of range for {num_classes} classes",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Expands class indices into `num_classes` binary channels.
pub fn one_hot(labels: &LabelField, num_classes: usize) -> Result<ScalarField> {
    labels.check_classes(num_classes)?;
    let n = labels.len();
    let mut data = vec![0.0; num_classes * n];
    for (i, &l) in labels.data().iter().enumerate() {
        data[l as usize * n + i] = 1.0;
    }
    let mut dims = Vec::with_capacity(labels.dims().len() + 1);
    dims.push(num_classes);
    dims.extend_from_slice(labels.dims());
    Ok(ScalarField::from_parts(dims, data))
}

/// Per-pixel softmax over the channel axis, shifted by the per-pixel maximum.
pub fn softmax(logits: &ScalarField) -> Result<ScalarField> {
    if let Some(v) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("softmax: non-finite logit {v}")));
    }
    let c = logits.channels();
    let n = logits.pixels();
    let src = logits.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..n {
        let max = (0..c).map(|k| src[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (src[k * n + i] - max).exp();
            out[k * n + i] = e;
            sum += e;
        }
        for k in 0..c {
            out[k * n + i] /= sum;
        }
    }
    Ok(ScalarField::from_parts(logits.dims().to_vec(), out))
}

/// Vector-Jacobian product of softmax: maps `dL/dp` to `dL/dz` per pixel,
/// `p_k * (g_k - sum_j g_j p_j)`.
pub fn softmax_vjp(probs: &ScalarField, upstream: &ScalarField) -> Result<ScalarField> {
    if probs.dims() != upstream.dims() {
        return Err(Error::domain(format!(
            "softmax_vjp: dims {:?} and {:?} differ",
            probs.dims(),
            upstream.dims()
        )));
    }
    let c = probs.channels();
    let n = probs.pixels();
    let (p, g) = (probs.data(), upstream.data());
    let mut out = vec![0.0; p.len()];
    for i in 0..n {
        let dot: f64 = (0..c).map(|k| g[k * n + i] * p[k * n + i]).sum();
        for k in 0..c {
            out[k * n + i] = p[k * n + i] * (g[k * n + i] - dot);
        }
    }
    Ok(ScalarField::from_parts(probs.dims().to_vec(), out))
}

/// Seedable deterministic generator (ChaCha8). Identical seeds give
/// identical streams within one build.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-stream `index` of this seed.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index);
        Rng { seed, inner }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_f64()).collect()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform real in `[lo, hi]` (`lo` when the range is empty).
    pub fn real_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.next_f64()
        }
    }
}
