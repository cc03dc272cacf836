//! TNSR: a minimal binary tensor container.
//!
//! ```text
//! "TNSR" | version u8 = 1 | dtype u8 (1 = f32 LE, 2 = u8) | rank u8 (2..=4) | pad u8 = 0
//! dims: rank x u32 LE | payload, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{LabelField, ScalarField};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_U8: u8 = 2;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32 { dims: Vec<usize>, data: Vec<f32> },
    U8 { dims: Vec<usize>, data: Vec<u8> },
}

impl Tensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            Tensor::F32 { dims, .. } | Tensor::U8 { dims, .. } => dims,
        }
    }

    pub fn dtype(&self) -> u8 {
        match self {
            Tensor::F32 { .. } => DTYPE_F32,
            Tensor::U8 { .. } => DTYPE_U8,
        }
    }

    /// Narrows to f32.
    pub fn from_field(field: &ScalarField) -> Self {
        Tensor::F32 { dims: field.dims().to_vec(), data: field.data().iter().map(|&v| v as f32).collect() }
    }

    pub fn from_labels(labels: &LabelField) -> Result<Self> {
        let data = labels
            .data()
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::domain(format!("label {l} does not fit in u8"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::U8 { dims: labels.dims().to_vec(), data })
    }

    pub fn to_field(&self) -> Result<ScalarField> {
        let data = match self {
            Tensor::F32 { data, .. } => data.iter().map(|&v| v as f64).collect(),
            Tensor::U8 { data, .. } => data.iter().map(|&v| v as f64).collect(),
        };
        ScalarField::new(self.dims().to_vec(), data)
    }

    /// u8 tensors map directly; f32 tensors must hold non-negative integers.
    pub fn to_labels(&self) -> Result<LabelField> {
        let data = match self {
            Tensor::U8 { data, .. } => data.iter().map(|&v| v as u32).collect(),
            Tensor::F32 { data, .. } => data
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                        Ok(v as u32)
                    } else {
                        Err(Error::domain(format!("label value {v} is not a class index")))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        LabelField::new(self.dims().to_vec(), data)
    }
}

pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    let dims = tensor.dims();
    if !(2..=4).contains(&dims.len()) {
        return Err(Error::format("rank", format!("bad rank {}: must be 2..=4", dims.len())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, tensor.dtype(), dims.len() as u8, 0]);
    for &d in dims {
        let d = u32::try_from(d).ok().filter(|&d| d > 0);
        let d = d.ok_or_else(|| Error::format("dims", "bad dims: extents must be in 1..=u32::MAX"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        Tensor::F32 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Tensor::U8 { data, .. } => out.extend_from_slice(data),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("header", format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("magic", format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let (version, dtype, rank, pad) = (bytes[4], bytes[5], bytes[6] as usize, bytes[7]);
    if version != VERSION {
        return Err(Error::format("version", format!("bad version {version}")));
    }
    let elem = match dtype {
        DTYPE_F32 => 4,
        DTYPE_U8 => 1,
        _ => return Err(Error::format("dtype", format!("bad dtype {dtype}"))),
    };
    if !(2..=4).contains(&rank) {
        return Err(Error::format("rank", format!("bad rank {rank}")));
    }
    if pad != 0 {
        return Err(Error::format("pad", format!("bad pad byte {pad}")));
    }
    let dims_end = HEADER_LEN + 4 * rank;
    if bytes.len() < dims_end {
        return Err(Error::format("dims", "truncated dims"));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(Error::format("dims", format!("bad dims {dims:?}: extents must be >= 1")));
    }
    let expected = dims
        .iter()
        .try_fold(elem, |acc: usize, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dims", format!("bad dims {dims:?}: payload size overflows")))?;
    let payload = &bytes[dims_end..];
    if payload.len() < expected {
        return Err(Error::format("payload", format!("truncated payload: {} of {expected} bytes", payload.len())));
    }
    if payload.len() > expected {
        return Err(Error::format("payload", format!("{} trailing bytes", payload.len() - expected)));
    }
    Ok(match dtype {
        DTYPE_F32 => Tensor::F32 {
            dims,
            data: payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        },
        _ => Tensor::U8 { dims, data: payload.to_vec() },
    })
}

pub fn read(path: &Path) -> Result<Tensor> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, tensor: &Tensor) -> Result<()> {
    std::fs::write(path, encode(tensor)?)?;
    Ok(())
}
