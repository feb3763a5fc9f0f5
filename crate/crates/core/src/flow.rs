//! Flow grids and the PBFL1 flow file format.
//!
//! PBFL1 layout:
//!
//! ```text
//! "PBFL1 <width> <height>\n"                 ASCII header line
//! H·W records, row-major, each 9 bytes:
//!     f32 u (LE) | f32 v (LE) | u8 valid (0 or 1)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PBFL1_MAGIC: &str = "PBFL1";

/// Integer correspondences with a validity mask, as produced by matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<i32>,
    pub v: Vec<i32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, u: vec![0; n], v: vec![0; n], valid: vec![false; n] }
    }

    pub fn filled(width: usize, height: usize, u: i32, v: i32) -> Self {
        let n = width * height;
        Self { width, height, u: vec![u; n], v: vec![v; n], valid: vec![true; n] }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<(i32, i32)> {
        let i = self.idx(x, y);
        self.valid[i].then(|| (self.u[i], self.v[i]))
    }

    pub fn set(&mut self, x: usize, y: usize, u: i32, v: i32) {
        let i = self.idx(x, y);
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.idx(x, y);
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_size<T: GridSize>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }
}

/// Real-valued flow defined at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlow {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl DenseFlow {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, u: vec![0.0; width * height], v: vec![0.0; width * height] }
    }
}

/// Real-valued flow with a validity mask; the in-memory form of a PBFL1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowMap {
    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        let n = width * height;
        Self { width, height, u: vec![u; n], v: vec![v; n], valid: vec![true; n] }
    }

    /// Rounds to the nearest integer displacement, keeping the mask.
    pub fn to_field(&self) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|u| u.round() as i32).collect(),
            v: self.v.iter().map(|v| v.round() as i32).collect(),
            valid: self.valid.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{PBFL1_MAGIC} {} {}\n", self.width, self.height).into_bytes();
        out.reserve(self.u.len() * 9);
        for i in 0..self.u.len() {
            out.extend_from_slice(&(self.u[i] as f32).to_le_bytes());
            out.extend_from_slice(&(self.v[i] as f32).to_le_bytes());
            out.push(u8::from(self.valid[i]));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("PBFL1", "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format("PBFL1", "header is not ASCII"))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(PBFL1_MAGIC) {
            return Err(Error::format("PBFL1", format!("bad magic in header `{header}`")));
        }
        let mut dim = || -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::format("PBFL1", format!("bad dimensions in header `{header}`")))
        };
        let (width, height) = (dim()?, dim()?);
        if parts.next().is_some() {
            return Err(Error::format("PBFL1", "trailing header fields"));
        }
        let body = &bytes[nl + 1..];
        let n = width * height;
        if body.len() != n * 9 {
            return Err(Error::format("PBFL1", format!("expected {} payload bytes, got {}", n * 9, body.len())));
        }
        let mut map = FlowMap { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: vec![false; n] };
        for (i, rec) in body.chunks_exact(9).enumerate() {
            map.u[i] = f32::from_le_bytes(rec[0..4].try_into().unwrap()) as f64;
            map.v[i] = f32::from_le_bytes(rec[4..8].try_into().unwrap()) as f64;
            map.valid[i] = match rec[8] {
                0 => false,
                1 => true,
                b => return Err(Error::format("PBFL1", format!("validity byte {b} at record {i}"))),
            };
        }
        Ok(map)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl From<&FlowField> for FlowMap {
    fn from(f: &FlowField) -> Self {
        FlowMap {
            width: f.width,
            height: f.height,
            u: f.u.iter().map(|&u| u as f64).collect(),
            v: f.v.iter().map(|&v| v as f64).collect(),
            valid: f.valid.clone(),
        }
    }
}

impl From<&DenseFlow> for FlowMap {
    fn from(f: &DenseFlow) -> Self {
        FlowMap { width: f.width, height: f.height, u: f.u.clone(), v: f.v.clone(), valid: vec![true; f.u.len()] }
    }
}

pub trait GridSize {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
}

macro_rules! grid_size {
    ($($t:ty),*) => {$(
        impl GridSize for $t {
            fn width(&self) -> usize { self.width }
            fn height(&self) -> usize { self.height }
        }
    )*};
}

grid_size!(FlowField, DenseFlow, FlowMap);
