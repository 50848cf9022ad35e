//! Torus geometry and uniform discretization.
//!
//! The torus 𝕋^d_L = ℝ^d/L𝓛₀ has rectangular sides side_1 = L and
//! side_i = L·γ_{i−1} for i ≥ 2 with anisotropies γ_i ≥ 1. The grid collocates
//! at cell corners x = (i_1·h_1, …, i_d·h_d); integrals are Riemann sums
//! weighted by the volume element ∏h_i. Fields are stored as flat arrays in
//! axis-major order (axis 0 slowest, last axis contiguous).

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TorusSpec {
    d: usize,
    l: f64,
    gammas: Vec<f64>,
}

impl TorusSpec {
    pub fn new(d: usize, l: f64, gammas: &[f64]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidSpec(format!("d = {d} outside 1..=3")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidSpec(format!("L = {l} must be positive")));
        }
        if gammas.len() != d - 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} anisotropies for d = {d}, got {}",
                d - 1,
                gammas.len()
            )));
        }
        if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g >= 1.0)) {
            return Err(Error::InvalidSpec(format!("anisotropy γ = {g} < 1")));
        }
        Ok(Self {
            d,
            l,
            gammas: gammas.to_vec(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// side_1 = L, side_i = L·γ_{i−1}.
    pub fn sides(&self) -> Vec<f64> {
        let mut s = vec![self.l];
        s.extend(self.gammas.iter().map(|g| g * self.l));
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    spec: TorusSpec,
    counts: Vec<usize>,
    spacings: Vec<f64>,
    strides: Vec<usize>,
    volume_element: f64,
}

/// N_i = ceil(side_i/target_spacing), h_i = side_i/N_i ≤ target_spacing.
/// Requires target_spacing ≤ L/4, which guarantees N_i ≥ 4.
pub fn build_grid(spec: &TorusSpec, target_spacing: f64) -> Result<TorusGrid> {
    if !(target_spacing.is_finite() && target_spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target spacing {target_spacing} must be positive"
        )));
    }
    if target_spacing > spec.l() / 4.0 {
        return Err(Error::InvalidArgument(format!(
            "target spacing {} exceeds L/4 = {}",
            target_spacing,
            spec.l() / 4.0
        )));
    }
    let sides = spec.sides();
    let mut counts = Vec::with_capacity(spec.d());
    let mut spacings = Vec::with_capacity(spec.d());
    for &side in &sides {
        let ratio = side / target_spacing;
        // Exact divisions must not pick up a spurious extra point from rounding noise.
        let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        };
        counts.push(n);
        spacings.push(side / n as f64);
    }
    TorusGrid::from_counts(spec.clone(), counts, spacings)
}

impl TorusGrid {
    fn from_counts(spec: TorusSpec, counts: Vec<usize>, spacings: Vec<f64>) -> Result<Self> {
        if counts.iter().any(|&n| n < 4) {
            return Err(Error::InvalidSpec(format!(
                "grid counts {counts:?} below the minimum of 4 points per axis"
            )));
        }
        let n_total: usize = counts.iter().product();
        if n_total == 0 || n_total > (1usize << 31) {
            return Err(Error::InvalidSpec(format!(
                "total grid size {n_total} out of range"
            )));
        }
        let mut strides = vec![1usize; counts.len()];
        for a in (0..counts.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        let volume_element = spacings.iter().product();
        Ok(Self {
            spec,
            counts,
            spacings,
            strides,
            volume_element,
        })
    }

    /// Reconstruct a grid from persisted metadata (counts are trusted as written).
    pub fn from_parts(spec: TorusSpec, counts: &[usize]) -> Result<Self> {
        if counts.len() != spec.d() {
            return Err(Error::InvalidSpec(format!(
                "got {} axis counts for d = {}",
                counts.len(),
                spec.d()
            )));
        }
        let sides = spec.sides();
        let spacings: Vec<f64> = sides
            .iter()
            .zip(counts)
            .map(|(s, &n)| s / n as f64)
            .collect();
        Self::from_counts(spec, counts.to_vec(), spacings)
    }

    pub fn spec(&self) -> &TorusSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn volume_element(&self) -> f64 {
        self.volume_element
    }

    pub fn n_total(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn sides(&self) -> Vec<f64> {
        self.spec.sides()
    }

    /// Half the torus diameter bounds every periodic distance.
    pub fn diameter(&self) -> f64 {
        self.spec
            .sides()
            .iter()
            .map(|s| (s / 2.0) * (s / 2.0))
            .sum::<f64>()
            .sqrt()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.d());
        idx.iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum::<usize>()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.d()];
        let mut rem = flat;
        for a in 0..self.d() {
            idx[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
        idx
    }

    /// Coordinates of a grid point: x_a = i_a·h_a.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.spacings)
            .map(|(i, h)| *i as f64 * h)
            .collect()
    }

    /// Nearest grid point to a continuum point (ties round half away from zero).
    pub fn nearest_flat(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.d());
        let mut flat = 0;
        for a in 0..self.d() {
            let n = self.counts[a] as i64;
            let j = (x[a] / self.spacings[a]).round() as i64;
            flat += j.rem_euclid(n) as usize * self.strides[a];
        }
        flat
    }

    /// Euclidean distance minimized over lattice translates; inputs are wrapped
    /// into the fundamental domain first.
    pub fn periodic_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let sides = self.spec.sides();
        let mut acc = 0.0;
        for a in 0..self.d() {
            let mut da = (x[a] - y[a]).rem_euclid(sides[a]);
            da = da.min(sides[a] - da);
            acc += da * da;
        }
        acc.sqrt()
    }

    /// Per-axis min-image distances from the axis coordinate grid to center
    /// coordinate c, squared. Shared by ball masks and profile kernels.
    pub(crate) fn axis_dist2(&self, axis: usize, c: f64) -> Vec<f64> {
        let side = self.spec.sides()[axis];
        let h = self.spacings[axis];
        (0..self.counts[axis])
            .map(|i| {
                let mut da = (i as f64 * h - c).rem_euclid(side);
                da = da.min(side - da);
                da * da
            })
            .collect()
    }

    /// Grid points with periodic distance ≤ radius from the center (closed ball).
    /// Indices ascend; radius ≥ diameter yields every point.
    pub fn ball_mask(&self, center: &[f64], radius: f64) -> Result<BallMask> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius {radius} must be positive"
            )));
        }
        let r2 = radius * radius;
        let per_axis: Vec<Vec<f64>> = (0..self.d()).map(|a| self.axis_dist2(a, center[a])).collect();
        let mut indices = Vec::new();
        let mut idx = vec![0usize; self.d()];
        for flat in 0..self.n_total() {
            let d2: f64 = (0..self.d()).map(|a| per_axis[a][idx[a]]).sum();
            if d2 <= r2 {
                indices.push(flat);
            }
            for a in (0..self.d()).rev() {
                idx[a] += 1;
                if idx[a] < self.counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(BallMask { indices })
    }
}

#[derive(Debug, Clone)]
pub struct BallMask {
    pub indices: Vec<usize>,
}

impl BallMask {
    pub fn count(&self) -> usize {
        self.indices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_grid_exact_division() {
        let spec = TorusSpec::new(1, 8.0, &[]).unwrap();
        let g = build_grid(&spec, 1.0).unwrap();
        assert_eq!(g.counts(), &[8]);
        assert_eq!(g.spacings(), &[1.0]);
    }

    #[test]
    fn build_grid_anisotropic() {
        let spec = TorusSpec::new(2, 10.0, &[1.5]).unwrap();
        let g = build_grid(&spec, 0.5).unwrap();
        assert_eq!(g.counts(), &[20, 30]);
        assert_eq!(g.spacings(), &[0.5, 0.5]);
        assert_eq!(g.volume_element(), 0.25);
    }

    #[test]
    fn build_grid_ceil() {
        let spec = TorusSpec::new(1, 10.0, &[]).unwrap();
        let g = build_grid(&spec, 0.3).unwrap();
        assert_eq!(g.counts(), &[34]);
        assert!((g.spacings()[0] - 10.0 / 34.0).abs() < 1e-15);
        assert!(g.spacings()[0] <= 0.3);
    }

    #[test]
    fn build_grid_rejects_bad_inputs() {
        assert!(TorusSpec::new(0, 8.0, &[]).is_err());
        assert!(TorusSpec::new(4, 8.0, &[1.0, 1.0, 1.0]).is_err());
        assert!(TorusSpec::new(2, 8.0, &[0.5]).is_err());
        assert!(TorusSpec::new(1, -1.0, &[]).is_err());
        let spec = TorusSpec::new(1, 8.0, &[]).unwrap();
        assert!(build_grid(&spec, 0.0).is_err());
        assert!(build_grid(&spec, 3.0).is_err());
    }

    #[test]
    fn periodic_distance_examples() {
        let spec = TorusSpec::new(1, 10.0, &[]).unwrap();
        let g = build_grid(&spec, 1.0).unwrap();
        assert_eq!(g.periodic_distance(&[3.0], &[3.0]), 0.0);
        assert_eq!(g.periodic_distance(&[1.0], &[9.0]), 2.0);

        let spec2 = TorusSpec::new(2, 10.0, &[1.0]).unwrap();
        let g2 = build_grid(&spec2, 1.0).unwrap();
        assert!((g2.periodic_distance(&[0.0, 0.0], &[9.0, 9.0]) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ball_mask_wraparound() {
        let spec = TorusSpec::new(1, 8.0, &[]).unwrap();
        let g = build_grid(&spec, 1.0).unwrap();
        let m = g.ball_mask(&[0.0], 1.5).unwrap();
        assert_eq!(m.indices, vec![0, 1, 7]);
    }

    #[test]
    fn ball_mask_whole_torus() {
        let spec = TorusSpec::new(2, 8.0, &[1.0]).unwrap();
        let g = build_grid(&spec, 0.5).unwrap();
        let m = g.ball_mask(&[1.0, 2.0], g.diameter() + 1.0).unwrap();
        assert_eq!(m.count(), g.n_total());
    }

    #[test]
    fn ball_mask_volume_matches_continuum() {
        // |mask|·h² within 5% of πr² at radius 5 on the L = 64 torus.
        for target in [1.0, 0.5] {
            let spec = TorusSpec::new(2, 64.0, &[1.0]).unwrap();
            let g = build_grid(&spec, target).unwrap();
            let m = g.ball_mask(&[32.0, 32.0], 5.0).unwrap();
            let ratio =
                m.count() as f64 * g.volume_element() / (std::f64::consts::PI * 25.0);
            assert!((0.95..=1.05).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn ball_mask_translation_covariance() {
        let spec = TorusSpec::new(2, 8.0, &[1.0]).unwrap();
        let g = build_grid(&spec, 0.5).unwrap();
        let m0 = g.ball_mask(&[0.0, 0.0], 1.7).unwrap();
        // Translate by one grid step along each axis.
        let m1 = g.ball_mask(&[0.5, 1.0], 1.7).unwrap();
        let translated: std::collections::BTreeSet<usize> = m0
            .indices
            .iter()
            .map(|&f| {
                let idx = g.multi_index(f);
                g.flat_index(&[(idx[0] + 1) % 16, (idx[1] + 2) % 16])
            })
            .collect();
        let got: std::collections::BTreeSet<usize> = m1.indices.iter().copied().collect();
        assert_eq!(translated, got);
    }

    #[test]
    fn index_round_trip() {
        let spec = TorusSpec::new(3, 4.0, &[1.0, 2.0]).unwrap();
        let g = build_grid(&spec, 1.0).unwrap();
        assert_eq!(g.counts(), &[4, 4, 8]);
        for flat in 0..g.n_total() {
            assert_eq!(g.flat_index(&g.multi_index(flat)), flat);
        }
        // Axis-major: last axis contiguous.
        assert_eq!(g.flat_index(&[0, 0, 1]), 1);
        assert_eq!(g.flat_index(&[0, 1, 0]), 8);
        assert_eq!(g.flat_index(&[1, 0, 0]), 32);
    }

    #[test]
    fn nearest_flat_snaps_and_wraps() {
        let spec = TorusSpec::new(1, 8.0, &[]).unwrap();
        let g = build_grid(&spec, 1.0).unwrap();
        assert_eq!(g.nearest_flat(&[2.4]), 2);
        assert_eq!(g.nearest_flat(&[7.6]), 0);
        assert_eq!(g.nearest_flat(&[-0.4]), 0);
    }
}
