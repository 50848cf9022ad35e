//! Spectral-projector states built from a window weight.
//!
//! For a continuous weight h supported in [E, 2E] and a center x₀, the
//! windowed kernel column is Π_h(x, x₀) = Σ_λ h(λ)Ψ̄_λ(x₀)Ψ_λ(x); the state
//! is F = Π_h(·, x₀)/‖Π_h(·, x₀)‖₂ (so μ_h = |F|²dμ is a probability
//! measure) and F̃ carries the λh(λ)-weights with the same normalizing
//! denominator, giving the exact linear-combination identity
//! −ΔF = F̃ − VF up to the contributing eigenpair residuals. The state obeys
//! ‖F̃‖₂² ≤ 4‖h‖_∞²E², ∫V|F|² ≤ 2‖h‖_∞E, ∫|∇F|² ≤ 2‖h‖_∞E, and the
//! mass dichotomy applies to μ_h verbatim.

use std::fmt;
use std::sync::Arc;

use crate::diagnostics::{dichotomy_check, DichotomyReport};
use crate::eigen::SpectrumSlice;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::hamiltonian::{apply_hamiltonian, dirichlet_form};
use crate::scales::ScaleSet;

/// Continuous weight with supp h ⊂ [E, 2E]; evaluation clamps to the
/// support, so the invariant holds for any supplied closure.
#[derive(Clone)]
pub struct WindowWeight {
    e: f64,
    norm_inf: f64,
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for WindowWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WindowWeight")
            .field("e", &self.e)
            .field("norm_inf", &self.norm_inf)
            .finish()
    }
}

impl WindowWeight {
    pub fn new(
        e: f64,
        norm_inf: f64,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::InvalidArgument(format!("window anchor E = {e} must be positive")));
        }
        if !(norm_inf.is_finite() && norm_inf > 0.0) {
            return Err(Error::InvalidArgument("‖h‖_∞ must be positive".into()));
        }
        Ok(WindowWeight { e, norm_inf, h: Arc::new(h) })
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    pub fn norm_inf(&self) -> f64 {
        self.norm_inf
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        if lambda <= self.e || lambda >= 2.0 * self.e {
            0.0
        } else {
            (self.h)(lambda)
        }
    }
}

/// Smooth bump on (E, 2E): h(λ) = exp(1 − 1/(1 − u²)), u = (2λ − 3E)/E,
/// with h(3E/2) = 1 = ‖h‖_∞.
pub fn default_window_weight(e: f64) -> Result<WindowWeight> {
    if !(e.is_finite() && e > 0.0 && e < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "window anchor E = {e} outside (0, 1/2)"
        )));
    }
    let h = move |lambda: f64| -> f64 {
        let u = (2.0 * lambda - 3.0 * e) / e;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    };
    WindowWeight::new(e, 1.0, h)
}

/// One eigenpair's entry in the state manifest.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    /// Index into the source slice.
    pub index: usize,
    pub lambda: f64,
    /// h(λ).
    pub weight: f64,
    /// Ψ_λ(x₀).
    pub amplitude: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct ProjectorState {
    pub x0: usize,
    /// Unit L² norm by construction.
    pub f: ScalarField,
    /// λh(λ)-weighted analog, same denominator as F.
    pub f_tilde: ScalarField,
    pub contributions: Vec<Contribution>,
    /// Worst residual among contributing eigenpairs; the identity
    /// −ΔF = F̃ − VF holds within √m times this.
    pub max_residual: f64,
}

/// Assembles F and F̃ at the flat-index center x₀. A single contributing
/// eigenpair reduces exactly: F is the sign-fixed Ψ bit-for-bit.
pub fn build_projector_state(
    slice: &SpectrumSlice,
    weight: &WindowWeight,
    x0: usize,
) -> Result<ProjectorState> {
    if slice.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum slice".into()));
    }
    let grid = slice.pairs[0].psi.grid().clone();
    if x0 >= grid.n_total() {
        return Err(Error::InvalidArgument(format!("center index {x0} out of range")));
    }
    let mut contributions = Vec::new();
    for (index, pair) in slice.pairs.iter().enumerate() {
        let w = weight.eval(pair.lambda);
        if w != 0.0 {
            contributions.push(Contribution {
                index,
                lambda: pair.lambda,
                weight: w,
                amplitude: pair.psi.values()[x0],
                residual: pair.residual,
            });
        }
    }
    if contributions.is_empty() {
        return Err(Error::NotApplicable(
            "no eigenvalue of the slice falls in the weight support".into(),
        ));
    }
    if contributions.iter().all(|c| c.weight * c.amplitude == 0.0) {
        return Err(Error::DegenerateCenter);
    }
    let max_residual = contributions.iter().fold(0.0f64, |m, c| m.max(c.residual));

    if contributions.len() == 1 {
        let c = &contributions[0];
        let psi = &slice.pairs[c.index].psi;
        let vals: Vec<f64> = if c.weight * c.amplitude > 0.0 {
            psi.values().to_vec()
        } else {
            psi.values().iter().map(|&x| -x).collect()
        };
        let tilde: Vec<f64> = vals.iter().map(|&x| c.lambda * x).collect();
        return Ok(ProjectorState {
            x0,
            f: ScalarField::from_values(grid.clone(), vals)?,
            f_tilde: ScalarField::from_values(grid, tilde)?,
            contributions,
            max_residual,
        });
    }

    let n = grid.n_total();
    let mut f_raw = vec![0.0f64; n];
    let mut ft_raw = vec![0.0f64; n];
    for c in &contributions {
        let coef = c.weight * c.amplitude;
        let vals = slice.pairs[c.index].psi.values();
        for j in 0..n {
            f_raw[j] += coef * vals[j];
            ft_raw[j] += c.lambda * coef * vals[j];
        }
    }
    let volel = grid.volume_element();
    let denom = (f_raw.iter().map(|&x| x * x).sum::<f64>() * volel).sqrt();
    if !(denom > 0.0) {
        return Err(Error::DegenerateCenter);
    }
    for j in 0..n {
        f_raw[j] /= denom;
        ft_raw[j] /= denom;
    }
    Ok(ProjectorState {
        x0,
        f: ScalarField::from_values(grid.clone(), f_raw)?,
        f_tilde: ScalarField::from_values(grid, ft_raw)?,
        contributions,
        max_residual,
    })
}

/// Default center: the peak of the windowed density Σ h(λ)²|Ψ_λ(x)|²,
/// lowest flat index on ties.
pub fn default_center(slice: &SpectrumSlice, weight: &WindowWeight) -> Result<usize> {
    if slice.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum slice".into()));
    }
    let n = slice.pairs[0].psi.grid().n_total();
    let mut density = vec![0.0f64; n];
    let mut any = false;
    for pair in &slice.pairs {
        let w = weight.eval(pair.lambda);
        if w != 0.0 {
            any = true;
            for (d, &p) in density.iter_mut().zip(pair.psi.values()) {
                *d += w * w * p * p;
            }
        }
    }
    if !any {
        return Err(Error::NotApplicable(
            "no eigenvalue of the slice falls in the weight support".into(),
        ));
    }
    let mut best = 0usize;
    for (i, &v) in density.iter().enumerate() {
        if v > density[best] {
            best = i;
        }
    }
    if density[best] == 0.0 {
        return Err(Error::DegenerateCenter);
    }
    Ok(best)
}

/// ‖(−Δ + V)F − F̃‖₂.
pub fn projector_residual(state: &ProjectorState, v: &ScalarField) -> Result<f64> {
    let grid = state.f.grid();
    let hf = apply_hamiltonian(grid, v, &state.f)?;
    let volel = grid.volume_element();
    let sum: f64 = hf
        .values()
        .iter()
        .zip(state.f_tilde.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok((sum * volel).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectorBounds {
    /// ‖F̃‖₂² against 4‖h‖_∞²E².
    pub f_tilde_norm2: f64,
    pub f_tilde_bound: f64,
    pub f_tilde_margin: f64,
    /// ∫V|F|² against 2‖h‖_∞E.
    pub potential_mass: f64,
    pub potential_bound: f64,
    pub potential_margin: f64,
    /// ∫|∇F|² against 2‖h‖_∞E.
    pub dirichlet: f64,
    pub dirichlet_bound: f64,
    pub dirichlet_margin: f64,
}

pub fn projector_bounds(
    state: &ProjectorState,
    e: f64,
    weight: &WindowWeight,
    v: &ScalarField,
) -> Result<ProjectorBounds> {
    let grid = state.f.grid();
    if v.grid().counts() != grid.counts() {
        return Err(Error::GridMismatch("potential grid mismatch".into()));
    }
    let volel = grid.volume_element();
    let f_tilde_norm2 = state.f_tilde.l2_norm().powi(2);
    let f_tilde_bound = 4.0 * weight.norm_inf().powi(2) * e * e;
    let potential_mass: f64 = state
        .f
        .values()
        .iter()
        .zip(v.values())
        .map(|(&p, &w)| w * p * p * volel)
        .sum();
    let linear_bound = 2.0 * weight.norm_inf() * e;
    let dirichlet = dirichlet_form(grid, state.f.values());
    Ok(ProjectorBounds {
        f_tilde_norm2,
        f_tilde_bound,
        f_tilde_margin: f_tilde_bound - f_tilde_norm2,
        potential_mass,
        potential_bound: linear_bound,
        potential_margin: linear_bound - potential_mass,
        dirichlet,
        dirichlet_bound: linear_bound,
        dirichlet_margin: linear_bound - dirichlet,
    })
}

/// The mass dichotomy applied to μ_h = |F|²dμ; a single-pair state
/// reproduces the eigenfunction report bit-for-bit.
pub fn projector_dichotomy(
    state: &ProjectorState,
    e: f64,
    scales: &ScaleSet,
) -> Result<DichotomyReport> {
    dichotomy_check(&state.f, e, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{EigenPair, WindowKind};
    use crate::grid::{build_grid, TorusGrid, TorusSpec};
    use crate::scales::EnergyWindow;
    use std::f64::consts::PI;

    fn grid_1d(l: f64, target: f64) -> Arc<TorusGrid> {
        let spec = TorusSpec::new(1, l, &[]).unwrap();
        Arc::new(build_grid(&spec, target).unwrap())
    }

    /// Discrete eigenpair of −Δ on a 1D grid: cos or sin of mode m with the
    /// exact second-difference eigenvalue.
    fn discrete_mode(grid: &Arc<TorusGrid>, m: usize, sin: bool) -> EigenPair {
        let l = grid.sides()[0];
        let n = grid.counts()[0] as f64;
        let h = grid.spacings()[0];
        let lambda = (4.0 / (h * h)) * (PI * m as f64 / n).sin().powi(2);
        let amp = (2.0 / l).sqrt();
        let vals: Vec<f64> = (0..grid.n_total())
            .map(|i| {
                let t = 2.0 * PI * m as f64 * grid.point(i)[0] / l;
                amp * if sin { t.sin() } else { t.cos() }
            })
            .collect();
        EigenPair {
            lambda,
            psi: ScalarField::from_values(grid.clone(), vals).unwrap(),
            residual: 1e-14,
            norm_defect: 0.0,
        }
    }

    fn slice_of(pairs: Vec<EigenPair>) -> SpectrumSlice {
        SpectrumSlice {
            pairs,
            window: WindowKind::LowestK(0),
            iterations: 0,
            tol: 1e-10,
            complete: true,
        }
    }

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_unit_field(grid: &Arc<TorusGrid>, seed: u64) -> ScalarField {
        let mut st = seed;
        let mut vals: Vec<f64> = (0..grid.n_total()).map(|_| splitmix(&mut st) - 0.3).collect();
        let volel = grid.volume_element();
        let norm = (vals.iter().map(|&x| x * x).sum::<f64>() * volel).sqrt();
        vals.iter_mut().for_each(|x| *x /= norm);
        ScalarField::from_values(grid.clone(), vals).unwrap()
    }

    #[test]
    fn default_weight_matches_formula() {
        let e = 0.2;
        let w = default_window_weight(e).unwrap();
        assert_eq!(w.eval(1.5 * e), 1.0);
        assert_eq!(w.eval(e), 0.0);
        assert_eq!(w.eval(2.0 * e), 0.0);
        assert_eq!(w.eval(0.5 * e), 0.0);
        assert_eq!(w.eval(3.0 * e), 0.0);
        // u = −1/2 ⇒ exp(1 − 4/3)
        let expect = (-1.0f64 / 3.0).exp();
        assert!((w.eval(1.25 * e) - expect).abs() < 1e-15);
        assert!((w.eval(1.25 * e) - w.eval(1.75 * e)).abs() < 1e-15);
        assert!(default_window_weight(0.5).is_err());
        assert!(default_window_weight(0.0).is_err());
    }

    #[test]
    fn custom_weight_clamped_to_support() {
        let w = WindowWeight::new(0.2, 1.0, |_| 1.0).unwrap();
        assert_eq!(w.eval(0.1), 0.0);
        assert_eq!(w.eval(0.45), 0.0);
        assert_eq!(w.eval(0.3), 1.0);
        assert!(WindowWeight::new(0.0, 1.0, |_| 1.0).is_err());
        assert!(WindowWeight::new(0.2, 0.0, |_| 1.0).is_err());
    }

    #[test]
    fn single_pair_reduces_to_sign_fixed_eigenfunction() {
        let grid = grid_1d(16.0, 1.0);
        let psi = random_unit_field(&grid, 7);
        let e = 0.2;
        let pair = EigenPair { lambda: 0.3, psi: psi.clone(), residual: 1e-12, norm_defect: 0.0 };
        let w = default_window_weight(e).unwrap();

        // center with positive amplitude: F == Ψ bitwise
        let x_pos = psi.values().iter().position(|&v| v > 0.0).unwrap();
        let st = build_projector_state(&slice_of(vec![pair.clone()]), &w, x_pos).unwrap();
        assert_eq!(st.f.values(), psi.values());
        for (ft, f) in st.f_tilde.values().iter().zip(st.f.values()) {
            assert_eq!(*ft, 0.3 * f);
        }

        // negative amplitude: exact negation
        let x_neg = psi.values().iter().position(|&v| v < 0.0).unwrap();
        let st = build_projector_state(&slice_of(vec![pair]), &w, x_neg).unwrap();
        for (a, b) in st.f.values().iter().zip(psi.values()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn single_pair_dichotomy_reduction_is_bitwise() {
        let grid = grid_1d(32.0, 1.0);
        let psi = random_unit_field(&grid, 21);
        let e = 0.05;
        let scales = ScaleSet {
            d: 1,
            l: 32.0,
            eta: 0.25,
            c1: 1.0,
            c2: 1.0,
            c_v: 1.0,
            e,
            ell: 2.0,
            r: 6.0,
            window: EnergyWindow { e_min: 1e-6, e_max: 0.9 },
        };
        let pair =
            EigenPair { lambda: 1.5 * e, psi: psi.clone(), residual: 1e-12, norm_defect: 0.0 };
        let w = default_window_weight(e).unwrap();
        let x_neg = psi.values().iter().position(|&v| v < 0.0).unwrap();
        let st = build_projector_state(&slice_of(vec![pair]), &w, x_neg).unwrap();
        let a = projector_dichotomy(&st, e, &scales).unwrap();
        let b = dichotomy_check(&psi, e, &scales).unwrap();
        assert_eq!(a.mu_ell, b.mu_ell);
        assert_eq!(a.comp_r, b.comp_r);
        assert_eq!(a.flag_a, b.flag_a);
        assert_eq!(a.flag_b, b.flag_b);
        assert_eq!(a.violation_centers, b.violation_centers);
        assert_eq!(a.worst_margin, b.worst_margin);
    }

    #[test]
    fn constant_weight_value_cancels() {
        let grid = grid_1d(16.0, 0.25);
        let pairs = vec![discrete_mode(&grid, 3, false), discrete_mode(&grid, 4, false)];
        let e = 1.3; // both discrete eigenvalues sit in (E, 2E)
        assert!(pairs.iter().all(|p| p.lambda > e && p.lambda < 2.0 * e));
        let wa = WindowWeight::new(e, 1.0, |_| 1.0).unwrap();
        let wb = WindowWeight::new(e, 0.25, |_| 0.25).unwrap();
        let sa = build_projector_state(&slice_of(pairs.clone()), &wa, 1).unwrap();
        let sb = build_projector_state(&slice_of(pairs), &wb, 1).unwrap();
        for (a, b) in sa.f.values().iter().zip(sb.f.values()) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!((sa.f.l2_norm() - 1.0).abs() < 1e-13);
        assert!((sb.f.l2_norm() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn two_pair_state_matches_direct_summation() {
        let grid = grid_1d(16.0, 0.25);
        let p3 = discrete_mode(&grid, 3, false);
        let p4 = discrete_mode(&grid, 4, true);
        let e = 1.3;
        let w = default_window_weight(e);
        assert!(w.is_err()); // bump weight is for small energies; use a hat
        let w = WindowWeight::new(e, 1.0, move |l: f64| {
            1.0 - ((2.0 * l - 3.0 * e) / e).abs()
        })
        .unwrap();
        let x0 = 3usize;
        let st = build_projector_state(&slice_of(vec![p3.clone(), p4.clone()]), &w, x0).unwrap();

        // hand-assembled oracle
        let c3 = w.eval(p3.lambda) * p3.psi.values()[x0];
        let c4 = w.eval(p4.lambda) * p4.psi.values()[x0];
        let volel = grid.volume_element();
        let raw: Vec<f64> = p3
            .psi
            .values()
            .iter()
            .zip(p4.psi.values())
            .map(|(&a, &b)| c3 * a + c4 * b)
            .collect();
        let denom = (raw.iter().map(|&x| x * x).sum::<f64>() * volel).sqrt();
        for (got, want) in st.f.values().iter().zip(raw.iter().map(|&x| x / denom)) {
            assert!((got - want).abs() < 1e-14);
        }
        let raw_t: Vec<f64> = p3
            .psi
            .values()
            .iter()
            .zip(p4.psi.values())
            .map(|(&a, &b)| p3.lambda * c3 * a + p4.lambda * c4 * b)
            .collect();
        for (got, want) in st.f_tilde.values().iter().zip(raw_t.iter().map(|&x| x / denom)) {
            assert!((got - want).abs() < 1e-13);
        }
        assert!((st.f.l2_norm() - 1.0).abs() < 1e-14);
        assert_eq!(st.contributions.len(), 2);
    }

    #[test]
    fn degenerate_center_and_empty_window_reported() {
        let grid = grid_1d(16.0, 0.25);
        // sin modes vanish at x = 0
        let pairs = vec![discrete_mode(&grid, 3, true), discrete_mode(&grid, 4, true)];
        let w = WindowWeight::new(1.3, 1.0, |_| 1.0).unwrap();
        match build_projector_state(&slice_of(pairs), &w, 0) {
            Err(Error::DegenerateCenter) => {}
            other => panic!("expected DegenerateCenter, got {other:?}"),
        }
        // eigenvalue outside the support
        let far = vec![discrete_mode(&grid, 3, false)];
        let w = WindowWeight::new(0.2, 1.0, |_| 1.0).unwrap();
        match build_projector_state(&slice_of(far), &w, 0) {
            Err(Error::NotApplicable(_)) => {}
            other => panic!("expected NotApplicable, got {other:?}"),
        }
        assert!(build_projector_state(&slice_of(vec![]), &w, 0).is_err());
    }

    #[test]
    fn bounds_single_pair_are_tight_and_positive() {
        let grid = grid_1d(16.0, 0.25);
        let pair = discrete_mode(&grid, 1, false);
        let lambda = pair.lambda;
        let e = lambda / 1.5;
        let w = default_window_weight(e).unwrap();
        let st = build_projector_state(&slice_of(vec![pair]), &w, 0).unwrap();
        let v0 = ScalarField::zeros(grid.clone());
        let b = projector_bounds(&st, e, &w, &v0).unwrap();
        // one-term case: ‖F̃‖₂ = λ and ∫|∇F|² = λ
        assert!((b.f_tilde_norm2 - lambda * lambda).abs() < 1e-12);
        assert!((b.dirichlet - lambda).abs() < 1e-12);
        assert_eq!(b.potential_mass, 0.0);
        assert!(b.f_tilde_margin > 0.0);
        assert!(b.potential_margin > 0.0);
        assert!(b.dirichlet_margin > 0.0);
    }

    #[test]
    fn hamiltonian_identity_holds_for_exact_pairs() {
        let grid = grid_1d(16.0, 0.25);
        let pairs = vec![discrete_mode(&grid, 3, false), discrete_mode(&grid, 4, false)];
        let e = 1.3;
        let w = WindowWeight::new(e, 1.0, |_| 1.0).unwrap();
        let st = build_projector_state(&slice_of(pairs), &w, 0).unwrap();
        let v0 = ScalarField::zeros(grid.clone());
        let res = projector_residual(&st, &v0).unwrap();
        assert!(res < 1e-10, "residual {res}");
        assert!((st.f.l2_norm() - 1.0).abs() < 1e-12);
        let b = projector_bounds(&st, e, &w, &v0).unwrap();
        assert!(b.f_tilde_margin > 0.0);
        assert!(b.dirichlet_margin > 0.0);
    }

    #[test]
    fn default_center_picks_windowed_density_peak() {
        let grid = grid_1d(16.0, 0.25);
        let pairs = vec![discrete_mode(&grid, 3, false), discrete_mode(&grid, 4, false)];
        let w = WindowWeight::new(1.3, 1.0, |_| 1.0).unwrap();
        // both cosines peak at the origin
        assert_eq!(default_center(&slice_of(pairs), &w).unwrap(), 0);
        let sins = vec![discrete_mode(&grid, 3, true)];
        let w_out = WindowWeight::new(0.01, 1.0, |_| 1.0).unwrap();
        assert!(default_center(&slice_of(sins), &w_out).is_err());
    }
}
