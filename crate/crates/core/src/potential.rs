//! Deterministic Anderson–Bernoulli potentials V(x) = Σ_ξ α(ξ)·φ(x−ξ) over
//! integer lattice sites ξ, plus ingestion/validation of arbitrary bounded
//! potentials.
//!
//! The bump φ(x) = exp(1 − 1/(1 − |10x|²)) for |x| < 1/10 (else 0) is the
//! standard smooth mollifier rescaled to support radius 1/10 and peak 1.
//! Supports are disjoint (1/10 < 1/2), so each grid point sees at most the
//! nearest integer site; generation is an embarrassingly parallel per-point
//! lookup.
//!
//! Pseudorandom couplings come from a counter-based splitmix64 finalizer over
//! the site's flat index, so draws are reproducible and independent of
//! evaluation order and thread count.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::TorusGrid;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    /// exp(1 − 1/(1 − |10x|²)) on |x| < 1/10.
    SmoothMollifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BumpProfile {
    pub formula: Formula,
}

impl Default for BumpProfile {
    fn default() -> Self {
        Self {
            formula: Formula::SmoothMollifier,
        }
    }
}

impl BumpProfile {
    pub const SUPPORT_RADIUS: f64 = 0.1;

    pub fn eval(&self, x: &[f64]) -> f64 {
        let q: f64 = x.iter().map(|&c| 100.0 * c * c).sum();
        self.eval_q(q)
    }

    /// Evaluate from q = |10x|².
    #[inline]
    pub fn eval_q(&self, q: f64) -> f64 {
        match self.formula {
            Formula::SmoothMollifier => {
                if q >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - q)).exp()
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self.formula {
            Formula::SmoothMollifier => "smooth-mollifier",
        }
    }
}

pub fn bump_eval(profile: &BumpProfile, x: &[f64]) -> f64 {
    profile.eval(x)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// splitmix64 finalizer keyed by (seed, site index); the draw depends only on
/// the site, never on evaluation order.
#[inline]
fn site_hash(seed: u64, site_flat: u64) -> u64 {
    mix64(seed ^ GOLDEN.wrapping_mul(site_flat.wrapping_add(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingMap {
    /// Listed sites carry the given bit; unlisted sites are 0.
    Explicit { sites: Vec<(Vec<i64>, bool)> },
    /// α(ξ) = 1 iff the site hash clears the Bernoulli(p) threshold.
    Seeded { seed: u64, p: f64 },
}

impl CouplingMap {
    pub fn seeded(seed: u64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "Bernoulli parameter p = {p} outside [0,1]"
            )));
        }
        Ok(Self::Seeded { seed, p })
    }

    pub fn explicit(sites: Vec<(Vec<i64>, bool)>) -> Self {
        Self::Explicit { sites }
    }

    /// Text format: header `d L`, then one `ξ_1 … ξ_d bit` line per site.
    pub fn save_text<P: AsRef<Path>>(&self, path: P, d: usize, l: f64) -> Result<()> {
        let sites = match self {
            Self::Explicit { sites } => sites,
            Self::Seeded { .. } => {
                return Err(Error::InvalidArgument(
                    "seeded coupling maps are stored as seed/p config, not site lists".into(),
                ))
            }
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{d} {l}")?;
        for (site, bit) in sites {
            for c in site {
                write!(f, "{c} ")?;
            }
            writeln!(f, "{}", u8::from(*bit))?;
        }
        Ok(())
    }

    pub fn load_text<P: AsRef<Path>>(path: P) -> Result<(Self, usize, f64)> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty coupling map file".into()))??;
        let mut it = header.split_whitespace();
        let d: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("coupling header: missing d".into()))?;
        let l: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("coupling header: missing L".into()))?;
        let mut sites = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != d + 1 {
                return Err(Error::Format(format!(
                    "coupling line `{line}`: expected {} tokens",
                    d + 1
                )));
            }
            let site: Vec<i64> = toks[..d]
                .iter()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|_| Error::Format(format!("bad site coordinate `{t}`")))
                })
                .collect::<Result<_>>()?;
            let bit = match toks[d] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Format(format!("bad coupling bit `{other}`"))),
            };
            sites.push((site, bit));
        }
        Ok((Self::Explicit { sites }, d, l))
    }
}

/// Integer torus sides, so that ℤ^d sites tile the torus.
fn integer_sides(grid: &TorusGrid) -> Result<Vec<i64>> {
    grid.sides()
        .iter()
        .map(|&s| {
            let r = s.round();
            if (s - r).abs() <= 1e-9 && r >= 1.0 {
                Ok(r as i64)
            } else {
                Err(Error::NonIntegerSide(s))
            }
        })
        .collect()
}

enum BitLookup {
    Dense(Vec<bool>),
    Hashed { seed: u64, threshold: Option<u64> },
}

impl BitLookup {
    #[inline]
    fn get(&self, flat: u64) -> bool {
        match self {
            BitLookup::Dense(bits) => bits[flat as usize],
            BitLookup::Hashed { seed, threshold } => match threshold {
                None => false,
                Some(0) => true,
                Some(t) => site_hash(*seed, flat) >= *t,
            },
        }
    }
}

fn build_lookup(map: &CouplingMap, isides: &[i64]) -> Result<BitLookup> {
    match map {
        CouplingMap::Seeded { seed, p } => {
            // active ⇔ hash ≥ (1−p)·2^64; p = 1/2 reduces to the top bit.
            let threshold = if *p <= 0.0 {
                None
            } else if *p >= 1.0 {
                Some(0)
            } else {
                Some(((1.0 - p) * (u64::MAX as f64 + 1.0)) as u64)
            };
            Ok(BitLookup::Hashed {
                seed: *seed,
                threshold,
            })
        }
        CouplingMap::Explicit { sites } => {
            let n_sites: i64 = isides.iter().product();
            let mut bits = vec![false; n_sites as usize];
            for (site, bit) in sites {
                if site.len() != isides.len() {
                    return Err(Error::SiteOutOfDomain(site.clone()));
                }
                if site.iter().zip(isides).any(|(c, s)| *c < 0 || c >= s) {
                    return Err(Error::SiteOutOfDomain(site.clone()));
                }
                let mut flat = 0i64;
                for (c, s) in site.iter().zip(isides) {
                    flat = flat * s + c;
                }
                bits[flat as usize] = *bit;
            }
            Ok(BitLookup::Dense(bits))
        }
    }
}

/// Sample V(x) = Σ_ξ α(ξ)·φ(x−ξ) on the grid (periodized). Requires integer
/// torus sides; 0 ≤ V ≤ 1 because bump supports are disjoint.
pub fn anderson_bernoulli(
    grid: &Arc<TorusGrid>,
    couplings: &CouplingMap,
    profile: &BumpProfile,
) -> Result<ScalarField> {
    let isides = integer_sides(grid)?;
    let lookup = build_lookup(couplings, &isides)?;
    let d = grid.d();
    let counts = grid.counts().to_vec();
    let strides = grid.strides().to_vec();

    // Per-axis tables: nearest site coordinate and 100·(x−site)² at each index.
    let mut site_of: Vec<Vec<i64>> = Vec::with_capacity(d);
    let mut dq: Vec<Vec<f64>> = Vec::with_capacity(d);
    for a in 0..d {
        let h = grid.spacings()[a];
        let side = isides[a];
        let mut sites = Vec::with_capacity(counts[a]);
        let mut dqs = Vec::with_capacity(counts[a]);
        for i in 0..counts[a] {
            let x = i as f64 * h;
            let s = x.round();
            let dx = x - s;
            sites.push((s as i64).rem_euclid(side));
            dqs.push(100.0 * dx * dx);
        }
        site_of.push(sites);
        dq.push(dqs);
    }

    let mut values = vec![0.0f64; grid.n_total()];
    par::for_chunks_mut(&mut values, |start, out| {
        let mut idx = vec![0usize; d];
        let mut rem = start;
        for a in 0..d {
            idx[a] = rem / strides[a];
            rem %= strides[a];
        }
        for v in out.iter_mut() {
            let q: f64 = (0..d).map(|a| dq[a][idx[a]]).sum();
            if q < 1.0 {
                let mut flat = 0i64;
                for a in 0..d {
                    flat = flat * isides[a] + site_of[a][idx[a]];
                }
                if lookup.get(flat as u64) {
                    *v = profile.eval_q(q);
                }
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    });
    ScalarField::from_values(grid.clone(), values)
}

/// Load a potential field, rejecting negative values (the paper assumes V ≥ 0).
pub fn load_potential<P: AsRef<Path>>(path: P) -> Result<ScalarField> {
    let f = ScalarField::load(path)?;
    let min = f.min();
    if min < 0.0 {
        return Err(Error::NegativePotential(min));
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialStats {
    pub inf: f64,
    pub sup: f64,
    /// inf V = 0 (within 1e−14) and sup V > 0, the §2 standing assumptions.
    pub assumptions_met: bool,
}

pub fn potential_stats(v: &ScalarField) -> PotentialStats {
    let inf = v.min();
    let sup = v.max();
    PotentialStats {
        inf,
        sup,
        assumptions_met: inf.abs() <= 1e-14 && sup > 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, TorusSpec};

    fn grid(d: usize, l: f64, t: f64) -> Arc<TorusGrid> {
        let gammas = vec![1.0; d - 1];
        let spec = TorusSpec::new(d, l, &gammas).unwrap();
        Arc::new(build_grid(&spec, t).unwrap())
    }

    #[test]
    fn bump_examples() {
        let b = BumpProfile::default();
        assert_eq!(b.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(b.eval(&[0.1]), 0.0);
        assert_eq!(b.eval(&[0.0, 0.1]), 0.0);
        let e13 = (-1.0f64 / 3.0).exp();
        assert!((b.eval(&[0.05]) - e13).abs() < 1e-15);
        assert!((b.eval(&[0.05, 0.05]) - (-1.0f64).exp()).abs() < 1e-15);
        // radial, in [0,1], smooth support
        for t in [0.01, 0.05, 0.09, 0.099] {
            let v = b.eval(&[t]);
            assert!((0.0..=1.0).contains(&v));
            assert!((b.eval(&[-t]) - v).abs() == 0.0);
        }
    }

    #[test]
    fn empty_and_full_couplings() {
        let g = grid(2, 8.0, 0.5);
        let profile = BumpProfile::default();
        let v0 = anderson_bernoulli(&g, &CouplingMap::explicit(vec![]), &profile).unwrap();
        assert!(v0.values().iter().all(|&x| x == 0.0));

        // α ≡ 1: ℤ²-periodic, sup = 1 (grid hits the centers), 0 outside balls.
        let all: Vec<(Vec<i64>, bool)> = (0..8)
            .flat_map(|i| (0..8).map(move |j| (vec![i, j], true)))
            .collect();
        let v1 = anderson_bernoulli(&g, &CouplingMap::explicit(all), &profile).unwrap();
        assert_eq!(v1.max(), 1.0);
        assert!(v1.min() >= 0.0);
        // outside radius 1/10 of every integer site: exactly 0
        for (flat, &val) in v1.values().iter().enumerate() {
            let x = g.point(flat);
            let dist: f64 = x
                .iter()
                .map(|&c| {
                    let dc = c - c.round();
                    dc * dc
                })
                .sum::<f64>()
                .sqrt();
            if dist >= 0.1 {
                assert_eq!(val, 0.0);
            }
        }
        // ℤ²-periodicity: V(x+e1) = V(x) (shift by 2 grid steps)
        let n = g.counts()[1];
        for i0 in 0..g.counts()[0] {
            for i1 in 0..n {
                let a = v1.values()[i0 * n + i1];
                let b = v1.values()[((i0 + 2) % 16) * n + i1];
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn seeded_bits_match_frozen_oracle() {
        // splitmix64 site bits, seed 3, d=1, L=16
        let expect = [1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1];
        for (i, &e) in expect.iter().enumerate() {
            let bit = site_hash(3, i as u64) >> 63;
            assert_eq!(bit, e, "site {i}");
        }
    }

    #[test]
    fn case_a_frozen() {
        // d=1, L=16, h=0.25, seed=3: 9 active sites, V = 1 exactly at them.
        let g = grid(1, 16.0, 0.25);
        let v = anderson_bernoulli(
            &g,
            &CouplingMap::seeded(3, 0.5).unwrap(),
            &BumpProfile::default(),
        )
        .unwrap();
        let nz: Vec<usize> = v
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nz.len(), 9);
        assert_eq!(&nz[..6], &[0, 4, 8, 20, 28, 44]);
        assert!(nz.iter().all(|&i| v.values()[i] == 1.0));
        assert_eq!(v.integral(), 2.25);
        let st = potential_stats(&v);
        assert_eq!((st.inf, st.sup, st.assumptions_met), (0.0, 1.0, true));
    }

    #[test]
    fn case_c_frozen() {
        // d=1, L=4, h=1/16, seed=11: bump sampled off-center.
        let g = grid(1, 4.0, 1.0 / 16.0);
        let v = anderson_bernoulli(
            &g,
            &CouplingMap::seeded(11, 0.5).unwrap(),
            &BumpProfile::default(),
        )
        .unwrap();
        let nz: Vec<usize> = v
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nz, vec![0, 1, 47, 48, 49, 63]);
        assert!((v.values()[1] - 0.5267518885455156).abs() < 1e-14);
        assert!((v.integral() - 0.2566879721363789).abs() < 1e-13);
    }

    #[test]
    fn case_b_frozen() {
        // d=2, L=8, h=0.5, seed=7: 32 active sites of 64.
        let g = grid(2, 8.0, 0.5);
        let v = anderson_bernoulli(
            &g,
            &CouplingMap::seeded(7, 0.5).unwrap(),
            &BumpProfile::default(),
        )
        .unwrap();
        let nnz = v.values().iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nnz, 32);
        assert_eq!(v.integral(), 8.0);
        let nz: Vec<usize> = v
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| i)
            .take(6)
            .collect();
        assert_eq!(nz, vec![0, 2, 4, 12, 34, 36]);
    }

    #[test]
    fn superposition_matches_direct_loop() {
        // seed=42, p=1/2, d=2, L=16: compare against a brute-force double loop
        // over all sites (no nearest-site shortcut).
        let g = grid(2, 16.0, 0.5);
        let map = CouplingMap::seeded(42, 0.5).unwrap();
        let profile = BumpProfile::default();
        let v = anderson_bernoulli(&g, &map, &profile).unwrap();

        let mut direct = vec![0.0f64; g.n_total()];
        for (flat, slot) in direct.iter_mut().enumerate() {
            let x = g.point(flat);
            let mut acc = 0.0;
            for s0 in 0..16i64 {
                for s1 in 0..16i64 {
                    let active = site_hash(42, (s0 * 16 + s1) as u64) >> 63 == 1;
                    if !active {
                        continue;
                    }
                    // periodized bump
                    let mut q = 0.0;
                    for (&xa, sa) in x.iter().zip([s0 as f64, s1 as f64]) {
                        let mut dxa = (xa - sa).rem_euclid(16.0);
                        if dxa > 8.0 {
                            dxa -= 16.0;
                        }
                        q += 100.0 * dxa * dxa;
                    }
                    if q < 1.0 {
                        acc += profile.eval_q(q);
                    }
                }
            }
            *slot = acc;
        }
        for (a, b) in v.values().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let g = grid(2, 8.0, 0.25);
        let profile = BumpProfile::default();
        let base: Vec<(Vec<i64>, bool)> = (0..8)
            .flat_map(|i| {
                (0..8).map(move |j| (vec![i, j], site_hash(5, (i * 8 + j) as u64) >> 63 == 1))
            })
            .collect();
        let shifted: Vec<(Vec<i64>, bool)> = base
            .iter()
            .map(|(s, b)| (vec![(s[0] + 3) % 8, (s[1] + 1) % 8], *b))
            .collect();
        let v0 = anderson_bernoulli(&g, &CouplingMap::explicit(base), &profile).unwrap();
        let v1 = anderson_bernoulli(&g, &CouplingMap::explicit(shifted), &profile).unwrap();
        // shift by t = (3,1): 12 and 4 grid steps
        let (n0, n1) = (g.counts()[0], g.counts()[1]);
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                let a = v0.values()[i0 * n1 + i1];
                let b = v1.values()[((i0 + 12) % n0) * n1 + (i1 + 4) % n1];
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn stats_examples() {
        let g = grid(1, 8.0, 1.0);
        let z = ScalarField::zeros(g.clone());
        let s = potential_stats(&z);
        assert_eq!((s.inf, s.sup, s.assumptions_met), (0.0, 0.0, false));
        let c = ScalarField::constant(g.clone(), 0.5);
        let s = potential_stats(&c);
        assert_eq!((s.inf, s.sup, s.assumptions_met), (0.5, 0.5, false));
    }

    #[test]
    fn rejects_non_integer_side_and_bad_sites() {
        let spec = TorusSpec::new(1, 8.5, &[]).unwrap();
        let g = Arc::new(build_grid(&spec, 0.5).unwrap());
        let r = anderson_bernoulli(
            &g,
            &CouplingMap::seeded(1, 0.5).unwrap(),
            &BumpProfile::default(),
        );
        assert!(matches!(r, Err(Error::NonIntegerSide(_))));

        let g2 = grid(1, 8.0, 0.5);
        let bad = CouplingMap::explicit(vec![(vec![8], true)]);
        assert!(matches!(
            anderson_bernoulli(&g2, &bad, &BumpProfile::default()),
            Err(Error::SiteOutOfDomain(_))
        ));
    }

    #[test]
    fn coupling_text_round_trip() {
        let sites = vec![
            (vec![0i64, 3], true),
            (vec![2, 1], false),
            (vec![7, 7], true),
        ];
        let map = CouplingMap::explicit(sites.clone());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("alpha.map");
        map.save_text(&p, 2, 8.0).unwrap();
        let (loaded, d, l) = CouplingMap::load_text(&p).unwrap();
        assert_eq!(d, 2);
        assert_eq!(l, 8.0);
        assert_eq!(loaded, map);
    }

    #[test]
    fn load_potential_rejects_negative() {
        let g = grid(1, 8.0, 1.0);
        let mut f = ScalarField::zeros(g);
        f.values_mut()[3] = -0.1;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.fld");
        f.save(&p).unwrap();
        assert!(matches!(
            load_potential(&p),
            Err(Error::NegativePotential(_))
        ));
    }
}
