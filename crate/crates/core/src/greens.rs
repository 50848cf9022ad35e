//! Lattice Green's-kernel machinery on the box Λ_{r'}.
//!
//! The kernel b solves −Δb = δ_{x₁} − δ_{x₂} on the side-r′ torus Λ_{r'}
//! (r′ = 2r+1) and is synthesized as the truncated Fourier series
//!
//!   b(x) = Σ_{0<|ξ|_∞≤K} [e(−ξ·x₁/r′) − e(−ξ·x₂/r′)]
//!            · e(ξ·x/r′) / (4π²|ξ/r′|²·r′^d),   e(τ) = e^{2πiτ},
//!
//! whose L² norm obeys ‖b‖ ≤ r′^{(4−d)/2}·L_d(2)^{1/2}/(2π²) with the
//! Dirichlet series L_d(s) = Σ r_d(n)n^{−s} over the sum-of-squares counts
//! r_d(n). Around the kernel sit the smoothed box indicator χ (quintic
//! smoothstep shoulders of width 1/2, plateau Λ_{2r}, support Λ_{2r+1}), the
//! empirical variation constant
//!
//!   c_emp = osc_{Λ_{2r}}(Ψ) / (r^{(4−d)/2}(1+‖V‖_∞^{1/2})E^{1/2}),
//!
//! the pigeonhole witness |Ψ(x′)|² ≥ μ_Ψ(B)/vol(B), and the energy
//! identities ⟨∇Ψ,∇Ψ⟩ = ∫(E−V)|Ψ|², ∫V|Ψ|² ≤ E.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::field::ScalarField;
use crate::grid::TorusGrid;
use crate::grid::TorusSpec;
use crate::hamiltonian::dirichlet_form;
use crate::scales::ScaleSet;

/// r_d(n) for one shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShellCount {
    pub n: u64,
    pub count: u64,
}

/// Exact r_d(n) for n = 0..=n_max by enumerating the nonnegative octant with
/// sign multiplicities 2^{#nonzero coordinates}.
pub fn shell_counts(d: usize, n_max: u64) -> Result<Vec<ShellCount>> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidSpec(format!("dimension d = {d} not in 1..=3")));
    }
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be ≥ 1".into()));
    }
    let k = n_max.isqrt();
    let mut counts = vec![0u64; (n_max + 1) as usize];
    let mult = |x: u64| -> u64 { if x == 0 { 1 } else { 2 } };
    match d {
        1 => {
            for x in 0..=k {
                counts[(x * x) as usize] += mult(x);
            }
        }
        2 => {
            for x in 0..=k {
                let rem = n_max - x * x;
                let ky = rem.isqrt();
                for y in 0..=ky {
                    counts[(x * x + y * y) as usize] += mult(x) * mult(y);
                }
            }
        }
        _ => {
            for x in 0..=k {
                let remx = n_max - x * x;
                let ky = remx.isqrt();
                for y in 0..=ky {
                    let remy = remx - y * y;
                    let kz = remy.isqrt();
                    for z in 0..=kz {
                        counts[(x * x + y * y + z * z) as usize] += mult(x) * mult(y) * mult(z);
                    }
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(n, count)| ShellCount { n: n as u64, count })
        .collect())
}

/// Partial sum of L_d(s) with a tail certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletValue {
    pub d: usize,
    pub s: f64,
    pub x: u64,
    pub partial_sum: f64,
    /// ≈ C_d·X^{d/2−s} with the density constant C_d measured from the
    /// shell counts over (X/2, X].
    pub tail_bound: f64,
}

/// Σ_{n≤X} r_d(n)n^{−s}, s > d/2. Terms are accumulated in ascending n.
pub fn dirichlet_l(d: usize, s: f64, x: u64) -> Result<DirichletValue> {
    if !(s > d as f64 / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "L_{d}(s) diverges for s = {s} ≤ d/2"
        )));
    }
    if x < 1 {
        return Err(Error::InvalidArgument("cutoff X must be ≥ 1".into()));
    }
    let shells = shell_counts(d, x)?;
    let mut partial = 0.0;
    for sc in shells.iter().skip(1) {
        if sc.count > 0 {
            partial += sc.count as f64 * (sc.n as f64).powf(-s);
        }
    }
    // average shell density over the top dyadic block, against the n^{d/2−1}
    // reference scaling
    let lo = x / 2;
    let mut num = 0.0;
    let mut den = 0.0;
    for sc in shells.iter().skip((lo + 1) as usize) {
        num += sc.count as f64;
        den += (sc.n as f64).powf(d as f64 / 2.0 - 1.0);
    }
    let c_dens = if den > 0.0 { num / den } else { 0.0 };
    let tail_bound = c_dens / (s - d as f64 / 2.0) * (x as f64).powf(d as f64 / 2.0 - s);
    Ok(DirichletValue { d, s, x, partial_sum: partial, tail_bound })
}

/// The difference kernel sampled on its own sub-torus grid over Λ_{r'}.
#[derive(Debug, Clone)]
pub struct GreensField {
    pub field: ScalarField,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub k_cut: u32,
}

fn check_endpoint(name: &str, x: &[f64], d: usize, r_prime: f64) -> Result<()> {
    if x.len() != d {
        return Err(Error::InvalidArgument(format!(
            "{name} has {} coordinates, expected {d}",
            x.len()
        )));
    }
    // Λ_{2r} is the centered box of side r′−1: coordinates in [1/2, r′−1/2]
    for &xa in x {
        if !(xa >= 0.5 && xa <= r_prime - 0.5) {
            return Err(Error::InvalidArgument(format!(
                "{name} = {x:?} outside Λ_{{2r}} = [1/2, r′−1/2]^d, r′ = {r_prime}"
            )));
        }
    }
    Ok(())
}

/// Fourier coefficients over the ±K box, indexed by DFT bin ξ mod m.
fn b_spectrum(
    d: usize,
    r_prime: f64,
    x1: &[f64],
    x2: &[f64],
    k: u32,
    m: usize,
) -> Vec<Complex64> {
    let kk = k as i64;
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * m;
    }
    let n_total = m.pow(d as u32);
    let mut spec = vec![Complex64::new(0.0, 0.0); n_total];
    let scale = r_prime.powi(2 - d as i32) / (4.0 * std::f64::consts::PI.powi(2));
    let mut xi = vec![-kk; d];
    loop {
        let norm2: i64 = xi.iter().map(|&v| v * v).sum();
        if norm2 != 0 {
            let phase = |x: &[f64]| -> Complex64 {
                let t: f64 = xi.iter().zip(x).map(|(&v, &xa)| v as f64 * xa).sum();
                Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * t / r_prime)
            };
            let num = phase(x1) - phase(x2);
            let flat: usize = xi
                .iter()
                .zip(&strides)
                .map(|(&v, &s)| (v.rem_euclid(m as i64) as usize) * s)
                .sum();
            spec[flat] = num * (scale / norm2 as f64);
        }
        let mut a = d;
        loop {
            if a == 0 {
                return spec;
            }
            a -= 1;
            xi[a] += 1;
            if xi[a] <= kk {
                break;
            }
            xi[a] = -kk;
        }
    }
}

/// Synthesize b on Λ_{r'} with the default sub-grid density
/// ⌈(2K+1)/r′⌉ points per unit length (no aliasing: ≥ 2K+1 per side).
pub fn build_b(d: usize, r_prime: f64, x1: &[f64], x2: &[f64], k: u32) -> Result<GreensField> {
    let ppu = (((2 * k + 1) as f64) / r_prime).ceil() as usize;
    build_b_with(d, r_prime, x1, x2, k, ppu.max(1))
}

/// As [`build_b`] with an explicit sub-grid density (points per unit
/// length), e.g. rounded up to a multiple of a main grid's 1/h so the two
/// grids align.
pub fn build_b_with(
    d: usize,
    r_prime: f64,
    x1: &[f64],
    x2: &[f64],
    k: u32,
    points_per_unit: usize,
) -> Result<GreensField> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidSpec(format!("dimension d = {d} not in 1..=3")));
    }
    if !(r_prime.is_finite() && r_prime > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "box side r′ = {r_prime} must exceed 1"
        )));
    }
    if k < 8 {
        return Err(Error::InvalidArgument(format!(
            "Fourier cutoff K = {k} below the minimum 8"
        )));
    }
    check_endpoint("x1", x1, d, r_prime)?;
    check_endpoint("x2", x2, d, r_prime)?;
    let m = (points_per_unit as f64 * r_prime).ceil() as usize;
    if m < (2 * k + 1) as usize {
        return Err(Error::InvalidArgument(format!(
            "sub-grid of {m} points per side aliases the ±{k} spectrum"
        )));
    }

    let mut spec = b_spectrum(d, r_prime, x1, x2, k, m);
    let fft = NdFft::new(&vec![m; d]);
    fft.inverse(&mut spec);
    let scale = fft.len() as f64;
    let values: Vec<f64> = spec.into_iter().map(|c| c.re * scale).collect();

    let torus = TorusSpec::new(d, r_prime, &vec![1.0; d - 1])?;
    let grid = Arc::new(TorusGrid::from_parts(torus, &vec![m; d])?);
    Ok(GreensField {
        field: ScalarField::from_values(grid, values)?,
        x1: x1.to_vec(),
        x2: x2.to_vec(),
        k_cut: k,
    })
}

/// ‖b‖² straight from the coefficients: Σ |num|²·r′^{4−d}/(16π⁴|ξ|⁴).
pub fn b_parseval_norm2(gf: &GreensField) -> f64 {
    let grid = gf.field.grid();
    let d = grid.d();
    let r_prime = grid.spec().l();
    let m = grid.counts()[0];
    b_spectrum(d, r_prime, &gf.x1, &gf.x2, gf.k_cut, m)
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<f64>()
        * r_prime.powi(d as i32)
}

#[derive(Debug, Clone, Copy)]
pub struct BNormCheck {
    pub norm: f64,
    /// r′^{(4−d)/2}·L_d(2)^{1/2}/(2π²), with L_d(2) = partial sum + tail.
    pub bound: f64,
    pub ratio: f64,
}

/// Quadrature norm of b against the closed-form series bound. The Fourier
/// truncation only removes mass, so ratio ≤ 1 up to the certificate slack;
/// the tail certificate must sit below 2% of the partial sum.
pub fn b_norm_check(gf: &GreensField) -> Result<BNormCheck> {
    let grid = gf.field.grid();
    let d = grid.d();
    let r_prime = grid.spec().l();
    let x_cut = match d {
        1 | 2 => 100_000u64,
        _ => 10_000u64,
    };
    let ld = dirichlet_l(d, 2.0, x_cut)?;
    // certify that the modes beyond K carry < 2% of the norm series
    let k2 = (gf.k_cut as u64).pow(2);
    if k2 < x_cut {
        let at_k = dirichlet_l(d, 2.0, k2)?;
        let beyond = ld.partial_sum + ld.tail_bound - at_k.partial_sum;
        if beyond > 0.02 * ld.partial_sum {
            return Err(Error::InvalidArgument(format!(
                "K = {} leaves {:.2}% of the norm series uncertified",
                gf.k_cut,
                100.0 * beyond / ld.partial_sum
            )));
        }
    }
    let norm = gf.field.l2_norm();
    let bound = r_prime.powf((4.0 - d as f64) / 2.0) * (ld.partial_sum + ld.tail_bound).sqrt()
        / (2.0 * std::f64::consts::PI.powi(2));
    Ok(BNormCheck { norm, bound, ratio: norm / bound })
}

/// ⟨b, −Δ_h φ⟩ − (φ(x₁) − φ(x₂)) for a test field φ on the b sub-grid; the
/// caller supplies the exact endpoint values of φ.
pub fn weak_identity_defect(
    gf: &GreensField,
    phi: &ScalarField,
    phi_x1: f64,
    phi_x2: f64,
) -> Result<f64> {
    let grid = gf.field.grid();
    if phi.grid().counts() != grid.counts() {
        return Err(Error::GridMismatch(
            "test function does not live on the kernel sub-grid".into(),
        ));
    }
    let zero = ScalarField::zeros(grid.clone());
    let lap = crate::hamiltonian::apply_hamiltonian(grid, &zero, phi)?;
    Ok(gf.field.dot(&lap) - (phi_x1 - phi_x2))
}

pub const CUTOFF_K1_CAP: f64 = 4.0;
pub const CUTOFF_K2_CAP: f64 = 64.0;

/// Smoothed box indicator with its measured derivative bounds.
#[derive(Debug, Clone)]
pub struct CutoffField {
    pub field: ScalarField,
    pub center: Vec<f64>,
    pub r: f64,
    /// sup|∇χ| by central differences.
    pub k1: f64,
    /// sup|Δχ| by the second-difference Laplacian.
    pub k2: f64,
    pub k1_cap: f64,
    pub k2_cap: f64,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// χ = Π_a p(|x_a − c_a|) with p = 1 on [0, r], 0 beyond r + 1/2, and a
/// quintic smoothstep across the half-unit shoulder (C² at both seams).
pub fn build_cutoff(grid: &Arc<TorusGrid>, r: f64) -> Result<CutoffField> {
    let center: Vec<f64> = grid.sides().iter().map(|s| s / 2.0).collect();
    build_cutoff_at(grid, &center, r, CUTOFF_K1_CAP, CUTOFF_K2_CAP)
}

pub fn build_cutoff_at(
    grid: &Arc<TorusGrid>,
    center: &[f64],
    r: f64,
    k1_cap: f64,
    k2_cap: f64,
) -> Result<CutoffField> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidArgument(format!("box radius r = {r} must be positive")));
    }
    let d = grid.d();
    if center.len() != d {
        return Err(Error::InvalidArgument("center dimension mismatch".into()));
    }
    let min_side = grid.sides().iter().cloned().fold(f64::INFINITY, f64::min);
    if 2.0 * r + 1.0 > min_side {
        return Err(Error::InvalidArgument(format!(
            "support box of side {} exceeds the torus (min side {min_side})",
            2.0 * r + 1.0
        )));
    }

    let counts = grid.counts().to_vec();
    let profiles: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            grid.axis_dist2(a, center[a])
                .into_iter()
                .map(|d2| {
                    let u = d2.sqrt();
                    if u <= r {
                        1.0
                    } else if u >= r + 0.5 {
                        0.0
                    } else {
                        smoothstep(2.0 * (r + 0.5 - u))
                    }
                })
                .collect()
        })
        .collect();

    let n = grid.n_total();
    let mut values = vec![0.0f64; n];
    let mut idx = vec![0usize; d];
    for v in values.iter_mut() {
        *v = (0..d).map(|a| profiles[a][idx[a]]).product();
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }

    // measured derivative bounds from the sampled field
    let strides = grid.strides().to_vec();
    let spacings = grid.spacings().to_vec();
    let mut k1 = 0.0f64;
    let mut k2 = 0.0f64;
    let mut idx = vec![0usize; d];
    for i in 0..n {
        let mut grad2 = 0.0;
        let mut lap = 0.0;
        for a in 0..d {
            let (na, sa, ha) = (counts[a], strides[a], spacings[a]);
            let up = if idx[a] + 1 < na { i + sa } else { i + sa - na * sa };
            let dn = if idx[a] > 0 { i - sa } else { i + (na - 1) * sa };
            let g = (values[up] - values[dn]) / (2.0 * ha);
            grad2 += g * g;
            lap += (values[up] - 2.0 * values[i] + values[dn]) / (ha * ha);
        }
        k1 = k1.max(grad2.sqrt());
        k2 = k2.max(lap.abs());
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }

    if k1 > k1_cap {
        return Err(Error::CutoffCap { name: "k1", measured: k1, cap: k1_cap });
    }
    if k2 > k2_cap {
        return Err(Error::CutoffCap { name: "k2", measured: k2, cap: k2_cap });
    }

    Ok(CutoffField {
        field: ScalarField::from_values(grid.clone(), values)?,
        center: center.to_vec(),
        r,
        k1,
        k2,
        k1_cap,
        k2_cap,
    })
}

/// Empirical variation constant over the box Λ_{2r} around x₀.
#[derive(Debug, Clone, Copy)]
pub struct VariationCheck {
    pub c_emp: f64,
    /// max − min of Ψ over the sample set (never exceeds 2·sup|Ψ|).
    pub numerator: f64,
    /// r^{(4−d)/2}·(1 + ‖V‖_∞^{1/2})·E^{1/2}.
    pub denominator: f64,
    pub x_max: usize,
    pub x_min: usize,
    pub samples: usize,
}

/// Samples Ψ on a fixed stride lattice in Λ_{2r} plus its extreme points
/// there (so the pair maximum is the exact box oscillation, independent of
/// `sample_count`), and divides by the variation-bound denominator.
pub fn variation_check(
    psi: &ScalarField,
    e: f64,
    v: &ScalarField,
    scales: &ScaleSet,
    x0: usize,
    sample_count: usize,
) -> Result<VariationCheck> {
    let grid = psi.grid();
    let d = grid.d();
    if v.grid().counts() != grid.counts() {
        return Err(Error::GridMismatch("potential grid mismatch".into()));
    }
    if !(e > 0.0) {
        return Err(Error::InvalidArgument(format!("E = {e} must be positive")));
    }
    let r = scales.r;
    let counts = grid.counts().to_vec();
    let spacings = grid.spacings().to_vec();
    let sides = grid.sides();
    let mut half = vec![0usize; d];
    for a in 0..d {
        if 2.0 * r > sides[a] {
            return Err(Error::GeometryBroken(format!(
                "box Λ_{{2r}} of side {} exceeds torus side {}",
                2.0 * r,
                sides[a]
            )));
        }
        half[a] = ((r / spacings[a]) * (1.0 + 1e-12)).floor() as usize;
        if 2 * half[a] + 1 > counts[a] {
            half[a] = (counts[a] - 1) / 2;
        }
    }

    let x0_idx = grid.multi_index(x0);
    let vals = psi.values();
    // extreme points of Ψ on the box, lowest flat index on ties
    let mut maxv = (f64::NEG_INFINITY, usize::MAX);
    let mut minv = (f64::INFINITY, usize::MAX);
    let mut offs = half.iter().map(|&h| -(h as i64)).collect::<Vec<i64>>();
    let box_total: usize = half.iter().map(|&h| 2 * h + 1).product();
    for _ in 0..box_total {
        let mut flat = 0usize;
        for a in 0..d {
            let ia = (x0_idx[a] as i64 + offs[a]).rem_euclid(counts[a] as i64) as usize;
            flat += ia * grid.strides()[a];
        }
        let val = vals[flat];
        if val > maxv.0 || (val == maxv.0 && flat < maxv.1) {
            maxv = (val, flat);
        }
        if val < minv.0 || (val == minv.0 && flat < minv.1) {
            minv = (val, flat);
        }
        for a in (0..d).rev() {
            offs[a] += 1;
            if offs[a] <= half[a] as i64 {
                break;
            }
            offs[a] = -(half[a] as i64);
        }
    }

    let stride = ((box_total as f64 / sample_count.max(1) as f64).powf(1.0 / d as f64))
        .floor()
        .max(1.0) as usize;
    let lattice: usize = half
        .iter()
        .map(|&h| (2 * h).div_euclid(stride) + 1)
        .product();

    let numerator = maxv.0 - minv.0;
    let sup = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    debug_assert!(numerator <= 2.0 * sup + 1e-15);
    let denominator =
        r.powf((4.0 - d as f64) / 2.0) * (1.0 + v.max().max(0.0).sqrt()) * e.sqrt();
    Ok(VariationCheck {
        c_emp: numerator / denominator,
        numerator,
        denominator,
        x_max: maxv.1,
        x_min: minv.1,
        samples: lattice + 2,
    })
}

/// Pigeonhole witness inside B(x₀, ℓ).
#[derive(Debug, Clone, Copy)]
pub struct SupLowerCheck {
    pub witness: usize,
    /// |Ψ(x′)|² at the witness.
    pub value: f64,
    /// μ_Ψ(B)/vol(B) with the discrete ball volume (#points·∏h).
    pub bound: f64,
    pub margin: f64,
    pub mass: f64,
    pub ok: bool,
}

/// Requires μ_Ψ(B(x₀,ℓ)) ≥ 1/2 and produces x′ with |Ψ(x′)|² ≥ μ/vol(B) —
/// an exact average over the finitely many ball points.
pub fn sup_lower_check(psi: &ScalarField, x0: usize, ell: f64) -> Result<SupLowerCheck> {
    let grid = psi.grid();
    let mask = grid.ball_mask(&grid.point(x0), ell)?;
    let volel = grid.volume_element();
    let vals = psi.values();
    let mass: f64 = mask.indices.iter().map(|&i| vals[i] * vals[i] * volel).sum();
    if mass < 0.5 {
        return Err(Error::NotApplicable(format!(
            "ball mass {mass:.6} below 1/2; the pigeonhole hypothesis fails"
        )));
    }
    let mut witness = mask.indices[0];
    let mut value = vals[witness] * vals[witness];
    for &i in &mask.indices {
        let v = vals[i] * vals[i];
        if v > value {
            witness = i;
            value = v;
        }
    }
    let bound = mass / (mask.count() as f64 * volel);
    Ok(SupLowerCheck {
        witness,
        value,
        bound,
        margin: value - bound,
        mass,
        ok: value >= bound * (1.0 - 1e-12),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EnergyIdentities {
    /// Forward-difference ⟨∇Ψ,∇Ψ⟩.
    pub dirichlet: f64,
    /// |⟨∇Ψ,∇Ψ⟩ − ∫(E−V)|Ψ|²|.
    pub dirichlet_residual: f64,
    /// ∫V|Ψ|², bounded by E up to solver tolerance.
    pub potential_mass: f64,
}

pub fn energy_identities(psi: &ScalarField, e: f64, v: &ScalarField) -> Result<EnergyIdentities> {
    let grid = psi.grid();
    if v.grid().counts() != grid.counts() {
        return Err(Error::GridMismatch("potential grid mismatch".into()));
    }
    let volel = grid.volume_element();
    let dirichlet = dirichlet_form(grid, psi.values());
    let mut potential_mass = 0.0;
    let mut norm2 = 0.0;
    for (p, w) in psi.values().iter().zip(v.values()) {
        potential_mass += w * p * p * volel;
        norm2 += p * p * volel;
    }
    Ok(EnergyIdentities {
        dirichlet,
        dirichlet_residual: (dirichlet - (e * norm2 - potential_mass)).abs(),
        potential_mass,
    })
}
