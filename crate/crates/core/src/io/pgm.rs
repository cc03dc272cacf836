//! Binary PGM (P5) with maxval up to 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{LabelField, ScalarField};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub data: Vec<u8>,
}

impl Pgm {
    /// Raw values as class indices, dims `[height, width]`.
    pub fn to_labels(&self) -> LabelField {
        LabelField::new(vec![self.height, self.width], self.data.iter().map(|&v| v as u32).collect())
            .expect("pgm dims are positive")
    }

    /// Values divided by maxval, dims `[1, height, width]`.
    pub fn to_intensity(&self) -> ScalarField {
        let scale = self.maxval as f64;
        ScalarField::new(vec![1, self.height, self.width], self.data.iter().map(|&v| v as f64 / scale).collect())
            .expect("pgm dims are positive")
    }

    pub fn from_labels(labels: &LabelField) -> Result<Self> {
        let (height, width) = match labels.dims() {
            [h, w] => (*h, *w),
            d => return Err(Error::domain(format!("pgm holds 2D label maps, got dims {d:?}"))),
        };
        let data = labels
            .data()
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::domain(format!("label {l} does not fit in a pgm"))))
            .collect::<Result<Vec<_>>>()?;
        let maxval = data.iter().copied().max().unwrap_or(0).max(1);
        Ok(Pgm { width, height, maxval, data })
    }

    /// Intensities in [0, 1] quantized to 0..=255.
    pub fn from_intensity(image: &ScalarField) -> Result<Self> {
        let (height, width) = match image.dims() {
            [1, h, w] | [h, w] => (*h, *w),
            d => return Err(Error::domain(format!("pgm holds 2D images, got dims {d:?}"))),
        };
        let data = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Ok(Pgm { width, height, maxval: 255, data })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &'static str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(field, format!("expected a decimal {field}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pgm> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some([b'P', k]) if k.is_ascii_digit() => {
            return Err(Error::Unsupported(format!("P{} netpbm files; only binary P5 is read", *k as char)))
        }
        _ => return Err(Error::format("magic", "bad magic: expected P5")),
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("dims", format!("bad dims {width}x{height}")));
    }
    if maxval == 0 {
        return Err(Error::format("maxval", "maxval must be positive"));
    }
    if maxval > 255 {
        return Err(Error::Unsupported(format!("pgm maxval {maxval}; only 8-bit files are read")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("header", "missing whitespace after maxval"));
    }
    let payload = &bytes[cur.pos + 1..];
    let n = width * height;
    if payload.len() < n {
        return Err(Error::format("payload", format!("truncated payload: {} of {n} bytes", payload.len())));
    }
    let data = payload[..n].to_vec();
    if let Some(v) = data.iter().find(|&&v| v as usize > maxval) {
        return Err(Error::format("payload", format!("value {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm { width, height, maxval: maxval as u8, data })
}

pub fn encode(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    out.extend_from_slice(&pgm.data);
    out
}

pub fn read(path: &Path) -> Result<Pgm> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, pgm: &Pgm) -> Result<()> {
    std::fs::write(path, encode(pgm))?;
    Ok(())
}
