use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DFLD";

/// Backward displacement per pixel: output pixel `(x, y)` samples the source
/// at `(x + dx, y + dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    vectors: Vec<[f64; 2]>,
}

impl DisplacementField {
    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vectors: vec![[0.0, 0.0]; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            width,
            height,
            vectors: vec![[dx, dy]; width * height],
        }
    }

    pub fn new(width: usize, height: usize, vectors: Vec<[f64; 2]>) -> Result<Self> {
        if vectors.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} vectors for a {width}x{height} field, got {}",
                width * height,
                vectors.len()
            )));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "displacements must be finite".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> [f64; 2],
    ) -> Result<Self> {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vectors.push(f(x, y));
            }
        }
        Self::new(width, height, vectors)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.vectors[y * self.width + x]
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|v| v[0] == 0.0 && v[1] == 0.0)
    }

    /// Mean Euclidean distance between corresponding vectors.
    pub fn mean_endpoint_error(&self, other: &DisplacementField) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::mismatch(self.dims(), other.dims()));
        }
        let total: f64 = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .sum();
        Ok(total / self.vectors.len() as f64)
    }

    /// Little-endian `DFLD | u32 width | u32 height | (f32 dx, f32 dy)*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.vectors.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for [dx, dy] in &self.vectors {
            out.extend_from_slice(&(*dx as f32).to_le_bytes());
            out.extend_from_slice(&(*dy as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: &str| Error::Parse {
            what: "displacement field".into(),
            message: message.into(),
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing DFLD header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let (width, height) = (word(4) as usize, word(8) as usize);
        let body = &bytes[12..];
        if body.len() != width * height * 8 {
            return Err(bad(&format!(
                "expected {} payload bytes for {width}x{height}, found {}",
                width * height * 8,
                body.len()
            )));
        }
        let vectors = body
            .chunks_exact(8)
            .map(|c| {
                let dx = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
                let dy = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
                [f64::from(dx), f64::from(dy)]
            })
            .collect();
        Self::new(width, height, vectors).map_err(|e| bad(&e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
