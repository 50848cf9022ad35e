//! Real scalar fields sampled on a torus grid, with a binary file format.
//!
//! File layout (all integers and floats little-endian):
//!   bytes 0..8   magic "TORFLD01"
//!   byte  8      d ∈ {1,2,3}
//!   byte  9      value kind: 0 = real f64 (1 = complex interleaved is reserved
//!                in the format but not produced or accepted by this crate)
//!   8×d bytes    u64 axis counts N_1..N_d (axis-major order)
//!   8 bytes      f64 L
//!   8×(d−1)      f64 anisotropies γ_1..γ_{d−1}
//!   8×∏N_i       f64 values, flat axis-major
//!
//! Values are Ψ, V, χ, b, F, … as plain samples; integrals over the torus are
//! Riemann sums weighted by the volume element.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{TorusGrid, TorusSpec};

pub const FIELD_MAGIC: &[u8; 8] = b"TORFLD01";
pub const KIND_REAL: u8 = 0;

#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        let n = grid.n_total();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<TorusGrid>, c: f64) -> Self {
        let n = grid.n_total();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn from_values(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_total() {
            return Err(Error::GridMismatch(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.n_total()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite field value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Field value at a continuum point (snapped to the nearest grid point).
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.values[self.grid.nearest_flat(x)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Volume-weighted L² inner product ⟨f,g⟩ = Σ f_i g_i ∏h_a.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        s * self.grid.volume_element()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Riemann-sum integral Σ f_i ∏h_a.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.volume_element()
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.values.len());
        buf.extend_from_slice(FIELD_MAGIC);
        buf.push(self.grid.d() as u8);
        buf.push(KIND_REAL);
        for &n in self.grid.counts() {
            buf.extend_from_slice(&(n as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.grid.spec().l().to_le_bytes());
        for &g in self.grid.spec().gammas() {
            buf.extend_from_slice(&g.to_le_bytes());
        }
        for &v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::Format("truncated field file".into()));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        if take(&mut off, 8)? != FIELD_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let d = take(&mut off, 1)?[0] as usize;
        if !(1..=3).contains(&d) {
            return Err(Error::Format(format!("dimension {d} outside 1..=3")));
        }
        let kind = take(&mut off, 1)?[0];
        if kind != KIND_REAL {
            return Err(Error::Format(format!(
                "value kind {kind} not supported (only real fields are implemented)"
            )));
        }
        let mut counts = Vec::with_capacity(d);
        for _ in 0..d {
            let raw = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            counts.push(raw as usize);
        }
        let l = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let mut gammas = Vec::with_capacity(d - 1);
        for _ in 0..d - 1 {
            gammas.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        let spec =
            TorusSpec::new(d, l, &gammas).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let grid = TorusGrid::from_parts(spec, &counts)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let n = grid.n_total();
        let body = take(&mut off, 8 * n)
            .map_err(|_| Error::Format("shape mismatch: value payload shorter than header".into()))?;
        if off != bytes.len() {
            return Err(Error::Format(
                "shape mismatch: trailing bytes after value payload".into(),
            ));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_values(Arc::new(grid), values)
    }
}
