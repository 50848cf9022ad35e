//! Closed-form scale arithmetic for the delocalization dichotomy.
//!
//! For an eigenvalue E ∈ (0,1) and a shape parameter η ∈ (0, 1/(4−d)) the two
//! radii are
//!
//!   ℓ = c_V·E^{−1/4+η(1−d/4)},   r = ℓ·E^{−η} = c_V·E^{−1/4−dη/4},
//!
//! with c_V = c₁(1+‖V‖_∞^{1/2})^{−1/2}. The admissible energy window
//! [E_min, E_max] = [(2c_V/L)^{4/(1+dη)}, min(c_V^{4/(1+dη)}, c₂^{2/(dη)})]
//! is exactly the set of E for which 1 ≤ r ≤ L/2 (equalities at the
//! endpoints), so both balls fit on the torus.
//!
//! Decay models δ: [1,∞) → (0, 1/2] feed the localization-length lower bound
//!
//!   LL_low = ℓ·min(1, E^{−η}/δ^{−1}(E)).
//!
//! The exponential model stores a tail C·e^{−βr}; its normalized profile is
//! δ(ρ) = C·e^{−log(2C)ρ} (so δ(1) = 1/2 whenever C > 1/2) with implied
//! length log(2C)/β. The algebraic model is δ(ρ) = C·ρ^{−α}.

use crate::error::{Error, Result};

pub fn validate_eta(d: usize, eta: f64) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidSpec(format!("dimension d = {d} not in 1..=3")));
    }
    let lim = 1.0 / (4 - d) as f64;
    if !(eta > 0.0 && eta < lim) {
        return Err(Error::InvalidArgument(format!(
            "eta = {eta} outside (0, 1/(4-d)) = (0, {lim}) for d = {d}"
        )));
    }
    Ok(())
}

/// c_V = c₁·(1 + v_sup^{1/2})^{−1/2}.
pub fn compute_cv(c1: f64, v_sup: f64) -> Result<f64> {
    if !(c1 > 0.0) {
        return Err(Error::InvalidArgument(format!("c1 = {c1} must be > 0")));
    }
    if !(v_sup >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "v_sup = {v_sup} must be >= 0"
        )));
    }
    Ok(c1 / (1.0 + v_sup.sqrt()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub ell: f64,
    pub r: f64,
}

/// ℓ = c_V·E^{−1/4+η(1−d/4)} and r = ℓ·E^{−η}; asserts the exponent identity
/// r = c_V·E^{−1/4−dη/4} to 1e−12 relative.
pub fn compute_scales(e: f64, eta: f64, d: usize, c_v: f64) -> Result<Scales> {
    validate_eta(d, eta)?;
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::InvalidArgument(format!("E = {e} outside (0,1)")));
    }
    if !(c_v > 0.0) {
        return Err(Error::InvalidArgument(format!("c_V = {c_v} must be > 0")));
    }
    let df = d as f64;
    let ell = c_v * e.powf(-0.25 + eta * (1.0 - df / 4.0));
    let r = ell * e.powf(-eta);
    let r_direct = c_v * e.powf(-0.25 - df * eta / 4.0);
    if (r - r_direct).abs() > 1e-12 * r_direct.abs() {
        return Err(Error::InvalidSpec(format!(
            "exponent identity violated: r = {r}, direct = {r_direct}"
        )));
    }
    Ok(Scales { ell, r })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWindow {
    pub e_min: f64,
    pub e_max: f64,
}

impl EnergyWindow {
    pub fn is_empty(&self) -> bool {
        self.e_min > self.e_max
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.e_min && e <= self.e_max
    }
}

/// [E_min, E_max] = [(2c_V/L)^{4/(1+dη)}, min(c_V^{4/(1+dη)}, c₂^{2/(dη)})].
/// An empty window is returned as-is (flagged by `is_empty`), not an error.
pub fn energy_window(l: f64, d: usize, eta: f64, c_v: f64, c2: f64) -> Result<EnergyWindow> {
    validate_eta(d, eta)?;
    if !(l > 0.0 && c_v > 0.0 && c2 > 0.0) {
        return Err(Error::InvalidArgument(
            "energy_window requires L, c_V, c2 > 0".into(),
        ));
    }
    let dn = d as f64 * eta;
    let p = 4.0 / (1.0 + dn);
    let e_min = (2.0 * c_v / l).powf(p);
    let e_max = c_v.powf(p).min(c2.powf(2.0 / dn));
    Ok(EnergyWindow { e_min, e_max })
}

/// Footnote constraint: 1 ≤ r(E) ≤ L/2 at both window endpoints (r is
/// monotone in E, so this covers the whole window). Checked with 1e−9
/// relative slack for the powf round trips.
pub fn window_geometry_ok(l: f64, d: usize, eta: f64, c_v: f64, window: &EnergyWindow) -> bool {
    if window.is_empty() {
        return false;
    }
    let tol = 1e-9;
    for e in [window.e_min, window.e_max] {
        let r = match compute_scales(e.min(1.0 - f64::EPSILON), eta, d, c_v) {
            Ok(s) => s.r,
            Err(_) => return false,
        };
        if r < 1.0 - tol || r > 0.5 * l * (1.0 + tol) {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayModel {
    /// Tail C·e^{−βr}; normalized profile δ(ρ) = C·e^{−log(2C)ρ}.
    Exponential { c: f64, beta: f64 },
    /// δ(ρ) = C·ρ^{−α}.
    Algebraic { c: f64, alpha: f64 },
}

impl DecayModel {
    pub fn exponential(c: f64, beta: f64) -> Result<Self> {
        if !(c > 0.0 && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "exponential decay model needs C, beta > 0 (got C = {c}, beta = {beta})"
            )));
        }
        Ok(Self::Exponential { c, beta })
    }

    pub fn algebraic(c: f64, alpha: f64) -> Result<Self> {
        if !(c > 0.0 && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "algebraic decay model needs C, alpha > 0 (got C = {c}, alpha = {alpha})"
            )));
        }
        Ok(Self::Algebraic { c, alpha })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::Algebraic { .. } => "algebraic",
        }
    }

    /// Normalized profile δ(ρ), ρ ≥ 1.
    pub fn delta(&self, rho: f64) -> f64 {
        match *self {
            Self::Exponential { c, .. } => c * (-(2.0 * c).ln() * rho).exp(),
            Self::Algebraic { c, alpha } => c * rho.powf(-alpha),
        }
    }

    /// δ(1): 1/2 for exponential with C > 1/2, C for algebraic.
    pub fn delta_at_one(&self) -> f64 {
        self.delta(1.0)
    }

    /// Strictly decreasing with δ(1) ≤ 1/2, i.e. a profile respecting the
    /// codomain [0, 1/2].
    pub fn admissible(&self) -> bool {
        let decreasing = match *self {
            Self::Exponential { c, .. } => c > 0.5,
            Self::Algebraic { .. } => true,
        };
        decreasing && self.delta_at_one() <= 0.5 + 1e-12
    }

    /// δ^{−1}(E): −log(E/C)/log(2C) (exponential) or (C/E)^{1/α} (algebraic).
    /// Defined only for 0 < E < δ(1).
    pub fn delta_inv(&self, e: f64) -> Result<f64> {
        match *self {
            Self::Exponential { c, .. } => {
                if c <= 0.5 {
                    return Err(Error::NotInvertible(
                        e,
                        format!("exponential profile with C = {c} <= 1/2 is not decreasing"),
                    ));
                }
                if !(e > 0.0 && e < self.delta_at_one()) {
                    return Err(Error::NotInvertible(
                        e,
                        format!("E outside (0, delta(1) = {})", self.delta_at_one()),
                    ));
                }
                Ok(-(e / c).ln() / (2.0 * c).ln())
            }
            Self::Algebraic { c, alpha } => {
                if !(e > 0.0 && e < c) {
                    return Err(Error::NotInvertible(
                        e,
                        format!("E outside (0, delta(1) = {c})"),
                    ));
                }
                Ok((c / e).powf(1.0 / alpha))
            }
        }
    }

    /// Implied localization length of the exponential tail, log(2C)/β.
    pub fn implied_length(&self) -> Option<f64> {
        match *self {
            Self::Exponential { c, beta } if c > 0.5 => Some((2.0 * c).ln() / beta),
            _ => None,
        }
    }
}

/// LL_low = c_V·E^{−1/4+η(1−d/4)}·min(1, E^{−η}/δ^{−1}(E)).
pub fn loc_length_lower_bound(
    e: f64,
    eta: f64,
    d: usize,
    c_v: f64,
    model: &DecayModel,
) -> Result<f64> {
    let scales = compute_scales(e, eta, d, c_v)?;
    let inv = model.delta_inv(e)?;
    Ok(scales.ell * 1.0f64.min(e.powf(-eta) / inv))
}

/// α > 4/(1+dη), the condition for ℓ_loc → ∞ as E → 0 under algebraic decay.
pub fn blowup_condition(d: usize, eta: f64, alpha: f64) -> Result<bool> {
    validate_eta(d, eta)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} must be > 0"
        )));
    }
    Ok(alpha > blowup_threshold(d, eta))
}

/// 4/(1+dη). As η → 1/(4−d) this tends to 4−d, the limiting decay exponent.
pub fn blowup_threshold(d: usize, eta: f64) -> f64 {
    4.0 / (1.0 + d as f64 * eta)
}

pub fn limiting_exponent(d: usize) -> f64 {
    (4 - d) as f64
}

/// Energy-independent inputs from which every per-energy [`ScaleSet`]
/// derives: geometry (d, L), the shape parameter η, the constants c₁ and c₂,
/// and the potential sup norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub d: usize,
    pub l: f64,
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_sup: f64,
}

impl ScaleParams {
    pub fn at_energy(&self, e: f64) -> Result<ScaleSet> {
        ScaleSet::for_energy(self.d, self.l, self.eta, self.c1, self.c2, self.v_sup, e)
    }
}

/// Bundle of all derived scales for one (grid, potential, energy) triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSet {
    pub d: usize,
    pub l: f64,
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_v: f64,
    pub e: f64,
    pub ell: f64,
    pub r: f64,
    pub window: EnergyWindow,
}

impl ScaleSet {
    pub fn for_energy(
        d: usize,
        l: f64,
        eta: f64,
        c1: f64,
        c2: f64,
        v_sup: f64,
        e: f64,
    ) -> Result<Self> {
        let c_v = compute_cv(c1, v_sup)?;
        let scales = compute_scales(e, eta, d, c_v)?;
        let window = energy_window(l, d, eta, c_v, c2)?;
        Ok(Self {
            d,
            l,
            eta,
            c1,
            c2,
            c_v,
            e,
            ell: scales.ell,
            r: scales.r,
            window,
        })
    }

    pub fn in_window(&self) -> bool {
        self.window.contains(self.e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cv_examples() {
        assert_eq!(compute_cv(1.0, 0.0).unwrap(), 1.0);
        assert!((compute_cv(1.0, 1.0).unwrap() - 0.7071067811865475).abs() < 1e-15);
        assert_eq!(compute_cv(1.0, 9.0).unwrap(), 0.5);
        assert!(compute_cv(0.0, 1.0).is_err());
        assert!(compute_cv(1.0, -1.0).is_err());
    }

    #[test]
    fn scales_examples() {
        let s = compute_scales(1e-4, 0.25, 2, 0.7071067811865475).unwrap();
        assert!((s.ell - 2.23606797749979).abs() < 1e-12);
        assert!((s.r - 22.360679774997898).abs() < 1e-11);
        let s = compute_scales(0.01, 0.5, 3, 1.0).unwrap();
        assert!((s.ell - 1.7782794100389228).abs() < 1e-13);
        assert!((s.r - 17.782794100389228).abs() < 1e-12);
        // r/ℓ = E^{−η} exactly (r is constructed as ℓ·E^{−η})
        assert_eq!(s.r / s.ell, 0.01f64.powf(-0.5));
    }

    #[test]
    fn eta_range_enforced() {
        assert!(compute_scales(0.1, 0.5, 2, 1.0).is_err()); // η = 1/(4−2)
        assert!(compute_scales(0.1, 0.0, 2, 1.0).is_err());
        assert!(compute_scales(0.1, 0.9, 3, 1.0).is_ok()); // 1/(4−3) = 1
        assert!(compute_scales(0.1, 1.0, 3, 1.0).is_err());
        assert!(compute_scales(1.5, 0.25, 2, 1.0).is_err()); // E ≥ 1
    }

    proptest! {
        #[test]
        fn exponent_identity(
            d in 1usize..=3,
            u in 1e-3f64..0.999,
            e in 1e-8f64..0.999,
            c_v in 0.01f64..10.0,
        ) {
            let eta = u / (4 - d) as f64;
            let s = compute_scales(e, eta, d, c_v).unwrap();
            let direct = c_v * e.powf(-0.25 - d as f64 * eta / 4.0);
            prop_assert!((s.r - direct).abs() <= 1e-12 * direct);
        }

        #[test]
        fn window_footnote(
            d in 1usize..=3,
            u in 1e-3f64..0.999,
            c1 in 0.05f64..4.0,
            l in 8.0f64..4096.0,
        ) {
            let eta = u / (4 - d) as f64;
            let w = energy_window(l, d, eta, c1, 1.0).unwrap();
            if !w.is_empty() && w.e_max < 1.0 {
                prop_assert!(window_geometry_ok(l, d, eta, c1, &w));
            }
        }

        #[test]
        fn algebraic_fast_decay_gives_ell(
            d in 1usize..=3,
            u in 0.1f64..0.9,
            c in 0.51f64..1.0,
            mult in 1.0f64..4.0,
            e in 1e-6f64..0.2,
        ) {
            // α ≥ 1/η and C ≤ 1 make the min argument ≥ 1, so the bound is ℓ.
            let eta = u / (4 - d) as f64;
            let alpha = mult / eta;
            let model = DecayModel::algebraic(c, alpha).unwrap();
            if e < c {
                let b = loc_length_lower_bound(e, eta, d, 1.0, &model).unwrap();
                let ell = compute_scales(e, eta, d, 1.0).unwrap().ell;
                prop_assert!((b - ell).abs() <= 1e-12 * ell);
            }
        }
    }

    #[test]
    fn window_frozen_example() {
        let w = energy_window(1000.0, 2, 0.25, 0.7071067811865475, 1.0).unwrap();
        assert!((w.e_min - 2.5198420997897464e-8).abs() < 1e-20);
        assert!((w.e_max - 0.3968502629920499).abs() < 1e-15);
        assert!(!w.is_empty());
        assert!(window_geometry_ok(1000.0, 2, 0.25, 0.7071067811865475, &w));
    }

    #[test]
    fn window_degenerate_example() {
        // c_V = 1, L = 2: E_min = 1 equals the c_V term of E_max.
        let w = energy_window(2.0, 2, 0.25, 1.0, 1.0).unwrap();
        assert_eq!(w.e_min, 1.0);
        assert_eq!(w.e_max, 1.0);
        assert!(!w.is_empty());
    }

    #[test]
    fn window_empty_flagged() {
        // tiny torus, small c2: E_min > E_max
        let w = energy_window(3.0, 2, 0.25, 1.0, 0.01).unwrap();
        assert!(w.is_empty());
        assert!(!window_geometry_ok(3.0, 2, 0.25, 1.0, &w));
    }

    #[test]
    fn decay_models() {
        let exp = DecayModel::exponential(1.0, 1.0).unwrap();
        assert!((exp.delta_at_one() - 0.5).abs() < 1e-15);
        assert!(exp.admissible());
        // C = 1: δ^{−1}(E) = −log E / log 2
        assert!((exp.delta_inv(0.25).unwrap() - 2.0).abs() < 1e-14);
        assert!(exp.delta_inv(0.5).is_err()); // E = δ(1)
        assert!((exp.implied_length().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        // C ≤ 1/2: profile not decreasing, inverse refused
        let flat = DecayModel::exponential(0.4, 1.0).unwrap();
        assert!(!flat.admissible());
        assert!(flat.delta_inv(0.1).is_err());

        let alg = DecayModel::algebraic(1.0, 4.0).unwrap();
        assert_eq!(alg.delta_at_one(), 1.0);
        assert!(!alg.admissible()); // δ(1) = 1 > 1/2
        assert!((alg.delta_inv(1e-4).unwrap() - 10.0).abs() < 1e-13);
        let tight = DecayModel::algebraic(0.5, 3.0).unwrap();
        assert!(tight.admissible());

        assert!(DecayModel::exponential(-1.0, 1.0).is_err());
        assert!(DecayModel::algebraic(1.0, 0.0).is_err());
    }

    #[test]
    fn ll_low_examples() {
        // algebraic C=1, α=4, d=2, η=0.25, E=1e−4: min term 1, bound = E^{−1/8}
        let m = DecayModel::algebraic(1.0, 4.0).unwrap();
        let b = loc_length_lower_bound(1e-4, 0.25, 2, 1.0, &m).unwrap();
        assert!((b - 3.1622776601683795).abs() < 1e-13);

        // exponential C=1, E=1/4: bound = 2^{1/4}·min(1, 2^{1/2}/2) = 2^{−1/4}
        let m = DecayModel::exponential(1.0, 1.0).unwrap();
        let b = loc_length_lower_bound(0.25, 0.25, 2, 1.0, &m).unwrap();
        assert!((b - 2.0f64.powf(-0.25)).abs() < 1e-14);

        // E above δ(1): error
        assert!(loc_length_lower_bound(0.6, 0.25, 2, 1.0, &m).is_err());
    }

    #[test]
    fn ll_low_monotone_for_exponential() {
        // Both branches of min(1, E^{−η}/δ^{−1}(E)) decrease in E while
        // log(C/E) > 4/(1+dη); past that (E > C·e^{−4/(1+dη)}) the second
        // branch turns around, so monotonicity only holds on this domain.
        let c = 1.0;
        let m = DecayModel::exponential(c, 0.7).unwrap();
        let (d, eta) = (2usize, 0.25);
        let e_top = c * (-4.0 / (1.0 + d as f64 * eta)).exp();
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let e = e_top * i as f64 / 200.0;
            let b = loc_length_lower_bound(e, eta, d, 1.0, &m).unwrap();
            assert!(b <= prev * (1.0 + 1e-12), "not nonincreasing at E = {e}");
            prev = b;
        }
    }

    #[test]
    fn blowup_examples() {
        assert!(blowup_condition(2, 0.25, 3.0).unwrap());
        assert!(!blowup_condition(2, 0.25, 2.5).unwrap());
        assert!((blowup_threshold(2, 0.25) - 2.6666666666666665).abs() < 1e-15);
        // η → 1/(4−d): threshold → 4−d
        for d in 1..=3 {
            let eta = 1.0 / (4 - d) as f64 - 1e-9;
            assert!((blowup_threshold(d, eta) - limiting_exponent(d)).abs() < 1e-7);
        }
        assert!(blowup_condition(2, 0.25, -1.0).is_err());
    }

    #[test]
    fn scale_set_bundle() {
        let s = ScaleSet::for_energy(2, 64.0, 0.25, 1.0, 1.0, 1.0, 0.05).unwrap();
        assert!((s.c_v - 0.7071067811865475).abs() < 1e-15);
        assert_eq!(s.r / s.ell, 0.05f64.powf(-0.25));
        assert!(s.window.e_min < s.window.e_max);
        assert!(s.in_window());

        let params = ScaleParams { d: 2, l: 64.0, eta: 0.25, c1: 1.0, c2: 1.0, v_sup: 1.0 };
        assert_eq!(params.at_energy(0.05).unwrap(), s);
    }
}
