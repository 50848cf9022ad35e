//! Multidimensional complex FFT on axis-major flat arrays, plus the discrete
//! free-Laplacian symbol and circular convolution.
//!
//! The discrete −Δ is diagonal in the DFT basis with symbol
//! Σ_a (4/h_a²)·sin²(π k_a/N_a); this powers exact free-spectrum oracles, the
//! eigensolver preconditioner, and ball-sum convolutions.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::grid::TorusGrid;

pub struct NdFft {
    shape: Vec<usize>,
    strides: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = shape
            .iter()
            .map(|&n| planner.plan_fft_forward(n))
            .collect();
        let inv = shape
            .iter()
            .map(|&n| planner.plan_fft_inverse(n))
            .collect();
        let mut strides = vec![1usize; shape.len()];
        for a in (0..shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        Self {
            shape: shape.to_vec(),
            strides,
            fwd,
            inv,
        }
    }

    pub fn for_grid(grid: &TorusGrid) -> Self {
        Self::new(grid.counts())
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let n = self.shape[axis];
        let stride = self.strides[axis];
        let plan = if inverse {
            &self.inv[axis]
        } else {
            &self.fwd[axis]
        };
        let outer: usize = self.shape[..axis].iter().product();
        let block = n * stride;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        if stride == 1 {
            for o in 0..outer {
                let line = &mut data[o * block..o * block + n];
                plan.process_with_scratch(line, &mut scratch);
            }
        } else {
            let mut line = vec![Complex64::default(); n];
            for o in 0..outer {
                for i in 0..stride {
                    let base = o * block + i;
                    for j in 0..n {
                        line[j] = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for j in 0..n {
                        data[base + j * stride] = line[j];
                    }
                }
            }
        }
    }

    /// Unnormalized forward DFT along every axis.
    pub fn forward(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.len());
        for a in 0..self.shape.len() {
            self.transform_axis(data, a, false);
        }
    }

    /// Inverse DFT normalized so that inverse(forward(x)) = x.
    pub fn inverse(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.len());
        for a in 0..self.shape.len() {
            self.transform_axis(data, a, true);
        }
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Real part of the inverse transform of the pointwise product a·b —
    /// the circular convolution of the originating real arrays.
    pub fn convolve_spectra(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        let mut prod: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        self.inverse(&mut prod);
        prod.into_iter().map(|c| c.re).collect()
    }
}

/// Symbol of the discrete −Δ at each DFT index: Σ_a (4/h_a²)·sin²(π k_a/N_a),
/// laid out axis-major like the fields.
pub fn free_symbol(grid: &TorusGrid) -> Vec<f64> {
    let counts = grid.counts();
    let spacings = grid.spacings();
    let d = grid.d();
    let per_axis: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            let n = counts[a] as f64;
            let c = 4.0 / (spacings[a] * spacings[a]);
            (0..counts[a])
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / n).sin();
                    c * s * s
                })
                .collect()
        })
        .collect();
    let n_total = grid.n_total();
    let mut sym = vec![0.0; n_total];
    let mut idx = vec![0usize; d];
    for v in sym.iter_mut() {
        *v = (0..d).map(|a| per_axis[a][idx[a]]).sum();
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    sym
}

/// Eigenvalues of the discrete free Laplacian, ascending.
pub fn free_eigenvalues_sorted(grid: &TorusGrid) -> Vec<f64> {
    let mut sym = free_symbol(grid);
    sym.sort_by(|a, b| a.total_cmp(b));
    sym
}
