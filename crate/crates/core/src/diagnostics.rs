//! Mass-in-ball diagnostics for normalized eigenfunctions.
//!
//! For ‖Ψ‖_{L²} = 1 the measure dμ_Ψ = |Ψ|² dμ assigns to every ball
//! B(x, ρ) the mass μ_Ψ(B(x,ρ)) = Σ_{y: dist(y,x) ≤ ρ} |Ψ(y)|²·∏h_a. The
//! profile over all centers is a circular convolution of |Ψ|²·∏h_a with the
//! ball indicator, so one FFT of the weights serves every radius.
//!
//! On top of the profiles sit:
//!   * the dichotomy check — at scales (ℓ, r), flag A ⇔ μ_Ψ(B(x,ℓ)) ≥ 1/2
//!     and flag B ⇔ 1 − μ_Ψ(B(x,r)) ≤ E; a center violates the dichotomy
//!     when both hold strictly (boundary equality counts as compliant);
//!   * the localization-length estimate — probe radii grow geometrically by
//!     2^{1/8} from one grid spacing to L/2; x₀* is the arg-max center at the
//!     smallest radius whose best mass reaches the threshold, and ℓ_loc is
//!     the smallest radius whose complement mass at x₀* drops below it;
//!   * decay fitting — least squares of log complement mass against r
//!     (exponential) and against log r (algebraic), better residual wins;
//!   * blow-up curves — per-energy medians of ℓ_loc next to the lower bound
//!     LL_low = ℓ·min(1, E^{−η}/δ^{−1}(E)).

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::field::ScalarField;
use crate::grid::TorusGrid;
use crate::scales::{loc_length_lower_bound, DecayModel, ScaleParams, ScaleSet};

/// How far ‖Ψ‖₂ may sit from 1 before the diagnostics refuse the field.
pub const NORM_TOL: f64 = 1e-10;

/// μ_Ψ(B(x, radius)) at every grid center x.
#[derive(Debug, Clone)]
pub struct MassProfile {
    grid: Arc<TorusGrid>,
    radius: f64,
    values: Vec<f64>,
}

impl MassProfile {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Center with the largest mass; ties resolve to the lowest flat index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

/// Shared state for profiling one Ψ at many radii: the DFT of the weight
/// w = |Ψ|²·∏h_a is taken once, each radius costs two more transforms.
pub struct ProfileEngine {
    grid: Arc<TorusGrid>,
    fft: NdFft,
    w_hat: Vec<Complex64>,
}

impl ProfileEngine {
    pub fn new(psi: &ScalarField) -> Result<Self> {
        check_normalized(psi)?;
        let grid = psi.grid().clone();
        let fft = NdFft::for_grid(&grid);
        let volel = grid.volume_element();
        let w: Vec<f64> = psi.values().iter().map(|&p| p * p * volel).collect();
        let w_hat = fft.forward_real(&w);
        Ok(Self { grid, fft, w_hat })
    }

    pub fn profile(&self, radius: f64) -> Result<MassProfile> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "profile radius {radius} must be positive"
            )));
        }
        let mask = origin_ball_indicator(&self.grid, radius);
        let m_hat = self.fft.forward_real(&mask);
        let mut values = self.fft.convolve_spectra(&self.w_hat, &m_hat);
        // the exact masses are nonnegative; the transforms can undershoot by
        // an ulp or two near empty regions
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        Ok(MassProfile { grid: self.grid.clone(), radius, values })
    }
}

/// Indicator of the closed ball around the grid origin, as a real field. The
/// min-image distance is symmetric under j → N−j, so correlating with it is
/// the same as convolving.
fn origin_ball_indicator(grid: &TorusGrid, radius: f64) -> Vec<f64> {
    let d = grid.d();
    let counts = grid.counts().to_vec();
    let per_axis: Vec<Vec<f64>> = (0..d).map(|a| grid.axis_dist2(a, 0.0)).collect();
    let r2 = radius * radius;
    let mut mask = vec![0.0f64; grid.n_total()];
    let mut idx = vec![0usize; d];
    for m in mask.iter_mut() {
        let d2: f64 = (0..d).map(|a| per_axis[a][idx[a]]).sum();
        if d2 <= r2 {
            *m = 1.0;
        }
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    mask
}

fn check_normalized(psi: &ScalarField) -> Result<()> {
    let norm = psi.l2_norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "field must be L²-normalized: got ‖Ψ‖₂ = {norm}"
        )));
    }
    Ok(())
}

pub fn mass_profile(psi: &ScalarField, radius: f64) -> Result<MassProfile> {
    ProfileEngine::new(psi)?.profile(radius)
}

/// Masses μ_Ψ(B(x₀, r_k)) at a single center for a batch of radii, by exact
/// summation: grid points are sorted by squared distance to x₀ once and each
/// radius reads a prefix sum. Matches the convolution route up to transform
/// round-off, with no error of its own.
pub fn center_masses(psi: &ScalarField, center: usize, radii: &[f64]) -> Vec<f64> {
    let grid = psi.grid();
    let d = grid.d();
    let counts = grid.counts().to_vec();
    let volel = grid.volume_element();
    let c = grid.point(center);
    let per_axis: Vec<Vec<f64>> = (0..d).map(|a| grid.axis_dist2(a, c[a])).collect();
    let vals = psi.values();
    let mut dw: Vec<(f64, f64)> = Vec::with_capacity(vals.len());
    let mut idx = vec![0usize; d];
    for &v in vals {
        let d2: f64 = (0..d).map(|a| per_axis[a][idx[a]]).sum();
        dw.push((d2, v * v * volel));
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    dw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let prefix: Vec<f64> = dw
        .iter()
        .map(|&(_, w)| {
            acc += w;
            acc
        })
        .collect();
    radii
        .iter()
        .map(|&r| {
            let r2 = r * r;
            let k = dw.partition_point(|&(d2, _)| d2 <= r2);
            if k == 0 {
                0.0
            } else {
                prefix[k - 1]
            }
        })
        .collect()
}

/// Outcome of the two-ball dichotomy test at one energy.
///
/// `flag_a[i]` records μ_Ψ(B(xᵢ,ℓ)) ≥ 1/2 and `flag_b[i]` records
/// 1 − μ_Ψ(B(xᵢ,r)) ≤ E. A *violation* needs both to hold strictly;
/// boundary equality in either quantity counts as compliant, and the margins
/// make such borderline centers visible: `worst_margin` is the maximum over
/// centers of min(μ_Ψ(B_ℓ) − 1/2, E − complement), positive iff some center
/// violates.
#[derive(Debug, Clone)]
pub struct DichotomyReport {
    pub e: f64,
    pub scales: ScaleSet,
    pub mu_ell: Vec<f64>,
    pub comp_r: Vec<f64>,
    pub flag_a: Vec<bool>,
    pub flag_b: Vec<bool>,
    pub violation_centers: Vec<usize>,
    pub worst_margin: f64,
    pub outside_window: bool,
}

impl DichotomyReport {
    pub fn violations(&self) -> usize {
        self.violation_centers.len()
    }
}

/// Evaluate the dichotomy for every center. Errors when either ball does not
/// fit on the torus (ℓ or r above L/2); energies outside the admissible
/// window are flagged but still evaluated.
pub fn dichotomy_check(psi: &ScalarField, e: f64, scales: &ScaleSet) -> Result<DichotomyReport> {
    let grid = psi.grid();
    let l = grid.spec().l();
    if (l - scales.l).abs() > 1e-9 * l.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "scale set was derived for L = {}, field lives on L = {}",
            scales.l, l
        )));
    }
    if !(e.is_finite() && e > 0.0) {
        return Err(Error::InvalidArgument(format!("E = {e} must be positive")));
    }
    let half = 0.5 * l;
    if scales.ell > half || scales.r > half {
        return Err(Error::GeometryBroken(format!(
            "ℓ = {:.6e}, r = {:.6e} with L/2 = {:.6e}; both balls must fit on the torus",
            scales.ell, scales.r, half
        )));
    }

    let engine = ProfileEngine::new(psi)?;
    let mu_ell = engine.profile(scales.ell)?.into_values();
    let mu_r = engine.profile(scales.r)?.into_values();

    let n = mu_ell.len();
    let mut flag_a = vec![false; n];
    let mut flag_b = vec![false; n];
    let mut comp_r = vec![0.0f64; n];
    let mut violation_centers = Vec::new();
    let mut worst_margin = f64::NEG_INFINITY;
    for i in 0..n {
        let comp = (1.0 - mu_r[i]).max(0.0);
        comp_r[i] = comp;
        flag_a[i] = mu_ell[i] >= 0.5;
        flag_b[i] = comp <= e;
        if mu_ell[i] > 0.5 && comp < e {
            violation_centers.push(i);
        }
        worst_margin = worst_margin.max((mu_ell[i] - 0.5).min(e - comp));
    }

    Ok(DichotomyReport {
        e,
        scales: *scales,
        mu_ell,
        comp_r,
        flag_a,
        flag_b,
        violation_centers,
        worst_margin,
        outside_window: !scales.window.contains(e),
    })
}

/// Geometric probe radii with ratio 2^{1/8}, from the finest grid spacing up
/// to L/2 (appended exactly if the sequence does not land on it).
pub fn probe_radii(grid: &TorusGrid) -> Vec<f64> {
    let h_min = grid
        .spacings()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let top = 0.5 * grid.spec().l();
    let mut radii = Vec::new();
    let mut k = 0u32;
    loop {
        let r = h_min * (k as f64 / 8.0).exp2();
        if r > top * (1.0 + 1e-12) {
            break;
        }
        radii.push(r);
        k += 1;
    }
    if radii.last().is_none_or(|&r| r < top * (1.0 - 1e-12)) {
        radii.push(top);
    }
    radii
}

/// Operational localization data for one normalized field.
#[derive(Debug, Clone)]
pub struct LocalizationEstimate {
    /// Flat index of x₀*.
    pub center: usize,
    pub center_coords: Vec<f64>,
    /// Smallest probe radius with complement mass ≤ threshold at x₀*;
    /// `None` when no radius up to L/2 qualifies.
    pub ell_loc: Option<f64>,
    /// Set when the mass never reaches the threshold at any probed scale.
    pub delocalized: bool,
    pub model: Option<DecayModel>,
    pub fit_residual: Option<f64>,
    pub radii: Vec<f64>,
    /// 1 − μ_Ψ(B(x₀*, r_k)) aligned with `radii`.
    pub complements: Vec<f64>,
    pub threshold: f64,
}

pub fn estimate_loc_length(psi: &ScalarField) -> Result<LocalizationEstimate> {
    estimate_loc_length_with(psi, 0.5)
}

/// x₀* is the arg-max of the mass profile at the smallest probe radius whose
/// maximum reaches `mass_threshold` (lowest flat index on ties); ℓ_loc is the
/// smallest probe radius whose complement mass at x₀* is ≤ the threshold.
/// When no radius ≤ L/2 reaches the threshold the field is flagged
/// delocalized at this scale and x₀* falls back to the arg-max at L/2.
pub fn estimate_loc_length_with(
    psi: &ScalarField,
    mass_threshold: f64,
) -> Result<LocalizationEstimate> {
    if !(mass_threshold > 0.0 && mass_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mass threshold {mass_threshold} outside (0,1)"
        )));
    }
    let grid = psi.grid().clone();
    let radii = probe_radii(&grid);
    let engine = ProfileEngine::new(psi)?;

    let mut reached = None;
    for &r in &radii {
        let (i, m) = engine.profile(r)?.argmax();
        if m >= mass_threshold {
            reached = Some(i);
            break;
        }
    }
    let (center, reached) = match reached {
        Some(i) => (i, true),
        None => (engine.profile(*radii.last().unwrap())?.argmax().0, false),
    };

    let masses = center_masses(psi, center, &radii);
    let complements: Vec<f64> = masses.iter().map(|&m| (1.0 - m).max(0.0)).collect();
    let ell_loc = if reached {
        radii
            .iter()
            .zip(&complements)
            .find(|&(_, &c)| c <= mass_threshold)
            .map(|(&r, _)| r)
    } else {
        None
    };

    let usable: Vec<(f64, f64)> = radii
        .iter()
        .zip(&complements)
        .filter(|&(_, &c)| c > 0.0)
        .map(|(&r, &c)| (r, c))
        .collect();
    let (model, fit_residual) = if usable.len() >= 3 {
        let rs: Vec<f64> = usable.iter().map(|p| p.0).collect();
        let cs: Vec<f64> = usable.iter().map(|p| p.1).collect();
        match fit_decay_masses(&rs, &cs) {
            Ok((m, res)) => (Some(m), Some(res)),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(LocalizationEstimate {
        center,
        center_coords: grid.point(center),
        delocalized: ell_loc.is_none(),
        ell_loc,
        model,
        fit_residual,
        radii,
        complements,
        threshold: mass_threshold,
    })
}

/// Least-squares decay fit on precomputed complement masses. Fits
/// log m = log C − βr and log m = log C − α·log r, keeps the candidate with
/// the smaller RMS log residual (ties favor the exponential), and rejects
/// non-decaying slopes. Needs at least three radii with positive mass.
pub fn fit_decay_masses(radii: &[f64], complements: &[f64]) -> Result<(DecayModel, f64)> {
    if radii.len() != complements.len() {
        return Err(Error::InvalidArgument(format!(
            "{} radii vs {} masses",
            radii.len(),
            complements.len()
        )));
    }
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(complements)
        .filter(|&(&r, &c)| r > 0.0 && c > 0.0 && r.is_finite() && c.is_finite())
        .map(|(&r, &c)| (r, c))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 3 usable radii, got {}",
            pts.len()
        )));
    }
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let xs_exp: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let xs_alg: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();

    let candidate = |xs: &[f64], algebraic: bool| -> Option<(DecayModel, f64)> {
        let (b0, b1, rms) = line_fit(xs, &ys)?;
        let c = b0.exp();
        let rate = -b1;
        let model = if algebraic {
            DecayModel::algebraic(c, rate)
        } else {
            DecayModel::exponential(c, rate)
        };
        model.ok().map(|m| (m, rms))
    };

    match (candidate(&xs_exp, false), candidate(&xs_alg, true)) {
        (Some((me, re)), Some((ma, ra))) => {
            if re <= ra {
                Ok((me, re))
            } else {
                Ok((ma, ra))
            }
        }
        (Some(hit), None) | (None, Some(hit)) => Ok(hit),
        (None, None) => Err(Error::NotApplicable(
            "no decaying model fits the complement masses".into(),
        )),
    }
}

/// Fit the complement-mass decay of Ψ around the center `x0` (flat index).
/// Every probe radius must leave positive mass outside the ball.
pub fn fit_decay(psi: &ScalarField, x0: usize, radii: &[f64]) -> Result<(DecayModel, f64)> {
    check_normalized(psi)?;
    if x0 >= psi.len() {
        return Err(Error::InvalidArgument(format!(
            "center index {x0} outside the grid"
        )));
    }
    let masses = center_masses(psi, x0, radii);
    let complements: Vec<f64> = masses.iter().map(|&m| 1.0 - m).collect();
    if let Some((i, _)) = complements.iter().enumerate().find(|&(_, &c)| c <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "complement mass vanishes at probe radius {}",
            radii[i]
        )));
    }
    fit_decay_masses(radii, &complements)
}

fn line_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let b1 = sxy / sxx;
    let b0 = ym - b1 * xm;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (b0 + b1 * x);
            e * e
        })
        .sum();
    Some((b0, b1, (sse / n).sqrt()))
}

/// One energy of a blow-up table.
#[derive(Debug, Clone)]
pub struct BlowupRow {
    pub e: f64,
    /// Median over the ensemble's localized estimates; `None` when every
    /// estimate at this energy came back delocalized.
    pub median_ell_loc: Option<f64>,
    /// Median of per-estimate LL_low values; estimates without an invertible
    /// decay model fall back to the min-term-1 bound ℓ.
    pub ll_low: f64,
    /// Majority fitted kind ("exponential" on ties, "none" without any fit).
    pub kind: &'static str,
    pub n_estimates: usize,
}

#[derive(Debug, Clone)]
pub struct BlowupCurve {
    /// Rows ordered by increasing energy.
    pub rows: Vec<BlowupRow>,
    /// Median ℓ_loc strictly decreases as E increases; ties or missing
    /// medians make it false.
    pub strictly_decreasing: bool,
}

/// Aggregate localization estimates at several energies into a blow-up
/// table. Entries sharing an energy (bitwise) form one ensemble row.
pub fn blowup_curve(
    ensemble: &[(f64, LocalizationEstimate)],
    params: &ScaleParams,
) -> Result<BlowupCurve> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let mut order: Vec<usize> = (0..ensemble.len()).collect();
    order.sort_by(|&i, &j| ensemble[i].0.total_cmp(&ensemble[j].0).then(i.cmp(&j)));

    let mut rows = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let e = ensemble[order[i]].0;
        let scales = params.at_energy(e)?;
        let mut ells = Vec::new();
        let mut lls = Vec::new();
        let (mut n_exp, mut n_alg) = (0usize, 0usize);
        let mut j = i;
        while j < order.len() && ensemble[order[j]].0 == e {
            let est = &ensemble[order[j]].1;
            if let Some(ell) = est.ell_loc {
                ells.push(ell);
            }
            let ll = match &est.model {
                Some(m) => {
                    match *m {
                        DecayModel::Exponential { .. } => n_exp += 1,
                        DecayModel::Algebraic { .. } => n_alg += 1,
                    }
                    match loc_length_lower_bound(e, params.eta, params.d, scales.c_v, m) {
                        Ok(v) => v,
                        Err(Error::NotInvertible(..)) => scales.ell,
                        Err(err) => return Err(err),
                    }
                }
                None => scales.ell,
            };
            lls.push(ll);
            j += 1;
        }
        let kind = if n_exp == 0 && n_alg == 0 {
            "none"
        } else if n_exp >= n_alg {
            "exponential"
        } else {
            "algebraic"
        };
        rows.push(BlowupRow {
            e,
            median_ell_loc: median(ells),
            ll_low: median(lls).unwrap(),
            kind,
            n_estimates: j - i,
        });
        i = j;
    }

    let strictly_decreasing = rows.len() >= 2
        && rows.windows(2).all(|w| {
            matches!(
                (w[0].median_ell_loc, w[1].median_ell_loc),
                (Some(a), Some(b)) if b < a
            )
        });
    Ok(BlowupCurve { rows, strictly_decreasing })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
