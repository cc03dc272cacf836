//! Boundaries, exact Euclidean distance bands and Normalized Surface Distance
//! over binary masks of any spatial rank.

use crate::error::{Error, Result};

/// Binary field over a spatial grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: Vec<usize>,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::domain(format!("mask extents must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::domain(format!("mask dims {dims:?} do not match {} values", data.len())));
        }
        Ok(Mask { dims, data })
    }

    pub fn empty(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Mask { dims, data: vec![false; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, i: usize) -> bool {
        self.data[i]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Row-major strides for `dims`.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Coordinates of flattened index `i`.
pub(crate) fn unravel(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        out[a] = i % dims[a];
        i /= dims[a];
    }
    out
}

/// Border pixels of a mask: sorted flattened indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySet {
    dims: Vec<usize>,
    indices: Vec<usize>,
}

impl BoundarySet {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_mask(&self) -> Mask {
        let mut m = Mask::empty(self.dims.clone());
        for &i in &self.indices {
            m.data[i] = true;
        }
        m
    }
}

/// Mask pixels that touch the image edge or have a face-adjacent
/// (4-connected in 2D, 6-connected in 3D) background neighbour.
pub fn extract_boundary(mask: &Mask) -> BoundarySet {
    let dims = mask.dims();
    let st = strides(dims);
    let indices = (0..mask.data.len())
        .filter(|&i| mask.data[i])
        .filter(|&i| {
            let coord = unravel(i, dims);
            coord.iter().enumerate().any(|(a, &x)| {
                x == 0 || x + 1 == dims[a] || !mask.data[i - st[a]] || !mask.data[i + st[a]]
            })
        })
        .collect();
    BoundarySet { dims: dims.to_vec(), indices }
}

/// Pixels within Euclidean distance `tau` of a boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mask: Mask,
    pub tau: f64,
}

const UNREACHED: i64 = i64::MAX;

/// Exact squared Euclidean distance from every pixel to the nearest seed,
/// by the separable lower-envelope-of-parabolas method. Pixels with no seed
/// at all get `None`.
pub fn squared_distance_transform(seeds: &Mask) -> Vec<Option<i64>> {
    let dims = seeds.dims();
    let st = strides(dims);
    let mut dist: Vec<i64> = seeds.data.iter().map(|&s| if s { 0 } else { UNREACHED }).collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..dims.len() {
        let len = dims[axis];
        for start in line_starts(dims, axis) {
            line.clear();
            line.extend((0..len).map(|k| dist[start + k * st[axis]]));
            envelope_1d(&line, &mut out);
            for (k, &v) in out.iter().enumerate() {
                dist[start + k * st[axis]] = v;
            }
        }
    }
    dist.into_iter().map(|d| (d != UNREACHED).then_some(d)).collect()
}

/// Flattened index of coordinate 0 along `axis` for every line parallel to it.
fn line_starts(dims: &[usize], axis: usize) -> impl Iterator<Item = usize> + '_ {
    let total: usize = dims.iter().product();
    let st = strides(dims);
    (0..total).filter(move |&i| (i / st[axis]) % dims[axis] == 0)
}

/// `out[p] = min_q f[q] + (p - q)^2` over finite `f[q]`.
fn envelope_1d(f: &[i64], out: &mut Vec<i64>) {
    let n = f.len();
    out.clear();
    out.resize(n, UNREACHED);
    // parabola vertices and the left end of each one's envelope segment
    let mut verts: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n);
    let meet = |q: usize, r: usize| -> f64 {
        let (q, r) = (q as i64, r as i64);
        ((f[r as usize] + r * r) - (f[q as usize] + q * q)) as f64 / (2 * (r - q)) as f64
    };
    for q in (0..n).filter(|&q| f[q] != UNREACHED) {
        loop {
            match verts.last() {
                Some(&top) => {
                    let s = meet(top, q);
                    if s <= *bounds.last().unwrap() {
                        verts.pop();
                        bounds.pop();
                    } else {
                        verts.push(q);
                        bounds.push(s);
                        break;
                    }
                }
                None => {
                    verts.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
    }
    if verts.is_empty() {
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < verts.len() && bounds[k + 1] < p as f64 {
            k += 1;
        }
        let q = verts[k] as i64;
        let d = p as i64 - q;
        *o = f[verts[k]] + d * d;
    }
}

/// Pixels whose distance to `boundary` is at most `tau`.
pub fn distance_band(boundary: &BoundarySet, tau: f64) -> Result<Band> {
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("tau must be non-negative, got {tau}")));
    }
    let d2 = squared_distance_transform(&boundary.to_mask());
    let limit = tau * tau;
    let data = d2.iter().map(|d| d.is_some_and(|v| v as f64 <= limit)).collect();
    Ok(Band { mask: Mask { dims: boundary.dims.clone(), data }, tau })
}

/// Normalized Surface Distance between two masks at tolerance `tau`.
/// Both empty gives 1, exactly one empty gives 0.
pub fn nsd(pred: &Mask, truth: &Mask, tau: f64) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::domain(format!("nsd: mask dims {:?} and {:?} differ", pred.dims(), truth.dims())));
    }
    let sp = extract_boundary(pred);
    let sy = extract_boundary(truth);
    let total = sp.len() + sy.len();
    if total == 0 {
        return Ok(1.0);
    }
    let bp = distance_band(&sp, tau)?;
    let by = distance_band(&sy, tau)?;
    let hits = sy.indices().iter().filter(|&&i| bp.mask.get(i)).count()
        + sp.indices().iter().filter(|&&i| by.mask.get(i)).count();
    Ok(hits as f64 / total as f64)
}
