//! Perturbed walks whose boundary rates are chosen so that a given product
//! form or odd coupled mixture is invariant.

use serde::{Deserialize, Serialize};

use crate::curves::{CurveSystem, UNIT_MARGIN};
use crate::detection::{companion_horizontal, companion_vertical, Companion, DetectionConfig, GeometricTerm, Move};
use crate::error::{Error, Result};
use crate::measure::{balance_residuals, solve_coefficients, GeometricMixture, GROUP_TOL};
use crate::model::{RandomWalk, RegionId};

pub const VERIFY_TOL: f64 = 1e-10;
pub const VERIFY_GRID: usize = 50;

/// Boundary rates before rescaling; may exceed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRates {
    pub h1: f64,
    pub hm1: f64,
    pub v1: f64,
    pub vm1: f64,
}

impl BoundaryRates {
    pub fn of(walk: &RandomWalk) -> Self {
        Self {
            h1: walk.h(1),
            hm1: walk.h(-1),
            v1: walk.v(1),
            vm1: walk.v(-1),
        }
    }

    /// Horizontal-axis outflow `H1 + Hm1 + sum_s p_{s,1}`.
    pub fn c_h(&self, walk: &RandomWalk) -> f64 {
        self.h1 + self.hm1 + walk.up_mass()
    }

    pub fn c_v(&self, walk: &RandomWalk) -> f64 {
        self.v1 + self.vm1 + walk.right_mass()
    }

    /// Smallest admissible rescale constant for these rates on `walk`'s interior.
    pub fn required_c(&self, walk: &RandomWalk) -> f64 {
        1.0_f64
            .max(self.c_h(walk))
            .max(self.c_v(walk))
            .max(self.h1 + self.v1 + walk.p(1, 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Closest point of the feasible ray to the original rates.
    #[default]
    Projection,
    /// Endpoint of the feasible ray, minimizing the axis outflow.
    Minimal,
}

/// Nonzero entry of `q = (perturbed rates) - (rescaled input rates)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDifference {
    pub region: RegionId,
    pub displacement: (i32, i32),
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub input_rescaled: RandomWalk,
    pub perturbed: RandomWalk,
    pub c: f64,
    pub rates: BoundaryRates,
    pub q: Vec<RateDifference>,
    pub target_measure: GeometricMixture,
    /// Terms anchoring the horizontal and vertical boundary solves.
    pub anchors: (GeometricTerm, GeometricTerm),
    pub residual: f64,
}

impl PerturbationResult {
    /// `q` restricted to one region as a displacement table.
    pub fn q_kernel(&self, region: RegionId) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for d in self.q.iter().filter(|d| d.region == region) {
            k[(d.displacement.0 + 1) as usize][(d.displacement.1 + 1) as usize] = d.value;
        }
        k
    }
}

/// Solves `a X + b Y = rhs` over the nonnegative quadrant, with `a < 0 < b`.
fn solve_line(a: f64, b: f64, rhs: f64, original: (f64, f64), policy: SelectionPolicy) -> (f64, f64) {
    let e = if rhs >= 0.0 { (0.0, rhs / b) } else { (rhs / a, 0.0) };
    if policy == SelectionPolicy::Minimal {
        return e;
    }
    let norm = a.hypot(b);
    let d = (b / norm, -a / norm);
    let t = ((original.0 - e.0) * d.0 + (original.1 - e.1) * d.1).max(0.0);
    ((e.0 + t * d.0).max(0.0), (e.1 + t * d.1).max(0.0))
}

/// Nonnegative `(H1, Hm1)` making `rho^i sigma^j` balance the horizontal axis.
pub fn solve_horizontal_boundary(walk: &RandomWalk, rho: f64, sigma: f64, policy: SelectionPolicy) -> (f64, f64) {
    let rhs = sigma * (-1..=1).map(|s| rho.powi(-s) * walk.p(s, -1)).sum::<f64>() - walk.up_mass();
    solve_line(1.0 - 1.0 / rho, 1.0 - rho, rhs, (walk.h(1), walk.h(-1)), policy)
}

/// Nonnegative `(V1, Vm1)` making `rho^i sigma^j` balance the vertical axis.
pub fn solve_vertical_boundary(walk: &RandomWalk, rho: f64, sigma: f64, policy: SelectionPolicy) -> (f64, f64) {
    let rhs = rho * (-1..=1).map(|t| sigma.powi(-t) * walk.p(-1, t)).sum::<f64>() - walk.right_mass();
    solve_line(1.0 - 1.0 / sigma, 1.0 - sigma, rhs, (walk.v(1), walk.v(-1)), policy)
}

fn snap(x: f64) -> f64 {
    if x.abs() < 1e-15 {
        0.0
    } else {
        x
    }
}

/// Divides every non-self-loop rate by `c`, installing `rates` on the axes.
pub fn rescale_with(walk: &RandomWalk, c: f64, rates: &BoundaryRates) -> Result<RandomWalk> {
    let required = rates.required_c(walk);
    if c < required * (1.0 - 1e-15) {
        return Err(Error::RescaleTooSmall { c, required });
    }
    let mut interior = Vec::with_capacity(8);
    for s in -1..=1 {
        for t in -1..=1 {
            if (s, t) != (0, 0) && walk.p(s, t) != 0.0 {
                interior.push(((s, t), walk.p(s, t) / c));
            }
        }
    }
    let out = RandomWalk::from_rates(&interior, (rates.hm1 / c, rates.h1 / c), (rates.vm1 / c, rates.v1 / c));
    let clamp = |v: [f64; 3]| v.map(snap);
    Ok(RandomWalk::new(
        out.interior().map(clamp),
        clamp(*out.horizontal()),
        clamp(*out.vertical()),
    ))
}

/// `c`-rescaled copy of `walk`; the invariant measure is unchanged.
pub fn rescale(walk: &RandomWalk, c: f64) -> Result<RandomWalk> {
    rescale_with(walk, c, &BoundaryRates::of(walk))
}

fn differences(input: &RandomWalk, perturbed: &RandomWalk) -> Vec<RateDifference> {
    let mut out = Vec::new();
    for region in RegionId::ALL {
        let (a, b) = (input.kernel(region), perturbed.kernel(region));
        for dx in -1..=1 {
            for dy in -1..=1 {
                let value = b.get(dx, dy) - a.get(dx, dy);
                if value.abs() > 1e-15 {
                    out.push(RateDifference {
                        region,
                        displacement: (dx, dy),
                        value,
                    });
                }
            }
        }
    }
    out
}

fn assemble(
    walk: &RandomWalk,
    rates: BoundaryRates,
    target: impl FnOnce(&RandomWalk) -> Result<GeometricMixture>,
    anchors: (GeometricTerm, GeometricTerm),
) -> Result<PerturbationResult> {
    let c = rates.required_c(walk).max(BoundaryRates::of(walk).required_c(walk));
    let input_rescaled = rescale(walk, c)?;
    let perturbed = rescale_with(walk, c, &rates)?;
    let target_measure = target(&perturbed)?;
    let residual = balance_residuals(&perturbed, &target_measure, VERIFY_GRID);
    if residual.is_nan() || residual > VERIFY_TOL {
        return Err(Error::Verification(residual));
    }
    Ok(PerturbationResult {
        q: differences(&input_rescaled, &perturbed),
        input_rescaled,
        perturbed,
        c,
        rates,
        target_measure,
        anchors,
        residual,
    })
}

fn check_term(curves: &CurveSystem, rho: f64, sigma: f64) -> Result<GeometricTerm> {
    let t = GeometricTerm::on(curves, rho, sigma);
    if !t.inside(UNIT_MARGIN) {
        return Err(Error::Divergent(rho, sigma));
    }
    if t.residual.abs() > crate::curves::CURVE_TOL {
        return Err(Error::NotOnCurve(rho, sigma, t.residual));
    }
    Ok(t)
}

/// Perturbed walk with product-form invariant measure `rho^i sigma^j`.
pub fn build_product_perturbation(
    walk: &RandomWalk,
    rho: f64,
    sigma: f64,
    policy: SelectionPolicy,
) -> Result<PerturbationResult> {
    let curves = CurveSystem::new(walk);
    let t = check_term(&curves, rho, sigma)?;
    let (h1, hm1) = solve_horizontal_boundary(walk, rho, sigma, policy);
    let (v1, vm1) = solve_vertical_boundary(walk, rho, sigma, policy);
    let rates = BoundaryRates { h1, hm1, v1, vm1 };
    assemble(
        walk,
        rates,
        |_| {
            let mut m = GeometricMixture::product_form(rho, sigma)?;
            m.terms[0] = t;
            Ok(m)
        },
        (t, t),
    )
}

fn unique_index(values: &[f64]) -> Vec<usize> {
    (0..values.len())
        .filter(|&k| {
            values
                .iter()
                .enumerate()
                .all(|(j, v)| j == k || (v - values[k]).abs() > GROUP_TOL)
        })
        .collect()
}

/// Perturbed walk whose invariant measure is a mixture over an odd coupled set.
///
/// The term with a unique `rho` fixes the horizontal rates and the term with
/// a unique `sigma` fixes the vertical ones. With `strict`, negative mass on
/// the check grid is an error instead of a warning.
pub fn build_mixture_perturbation(
    walk: &RandomWalk,
    gamma: &[GeometricTerm],
    policy: SelectionPolicy,
    strict: bool,
) -> Result<PerturbationResult> {
    if gamma.len() < 3 || gamma.len().is_multiple_of(2) {
        return Err(Error::InvalidGamma(format!(
            "mixture targets need an odd number of terms, at least 3 (got {})",
            gamma.len()
        )));
    }
    let curves = CurveSystem::new(walk);
    let terms: Vec<GeometricTerm> = gamma
        .iter()
        .map(|t| check_term(&curves, t.rho, t.sigma))
        .collect::<Result<_>>()?;
    let rhos: Vec<f64> = terms.iter().map(|t| t.rho).collect();
    let sigmas: Vec<f64> = terms.iter().map(|t| t.sigma).collect();
    let (hu, vu) = (unique_index(&rhos), unique_index(&sigmas));
    let (&kh, &kv) = match (hu.as_slice(), vu.as_slice()) {
        ([kh], [kv]) if kh != kv => (kh, kv),
        _ => {
            return Err(Error::InvalidGamma(
                "expected exactly one term with unique rho and one with unique sigma".into(),
            ))
        }
    };
    let (h1, hm1) = solve_horizontal_boundary(walk, terms[kh].rho, terms[kh].sigma, policy);
    let (v1, vm1) = solve_vertical_boundary(walk, terms[kv].rho, terms[kv].sigma, policy);
    let rates = BoundaryRates { h1, hm1, v1, vm1 };
    assemble(
        walk,
        rates,
        |perturbed| {
            let m = solve_coefficients(perturbed, &terms)?;
            if strict && m.has_negative_mass() {
                return Err(Error::NegativeMass(m.min_on_grid(crate::measure::NONNEG_GRID).0));
            }
            Ok(m)
        },
        (terms[kh], terms[kv]),
    )
}

/// `k` points of `Q` inside the unit square, ordered from the upper-left to
/// the lower-right corner.
pub fn candidate_terms(walk: &RandomWalk, k: usize) -> Result<Vec<GeometricTerm>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let curves = CurveSystem::new(walk);
    let (lo, hi) = curves.admissible_x_span(UNIT_MARGIN)?;
    let mut out = Vec::with_capacity(k);
    for idx in 0..k {
        let x = lo + (idx as f64 + 0.5) * (hi - lo) / k as f64;
        let ys: Vec<f64> = curves
            .q_roots_fixed_x(x)
            .roots
            .into_iter()
            .filter(|&y| y > UNIT_MARGIN && y < 1.0 - UNIT_MARGIN)
            .collect();
        let y = match ys.as_slice() {
            [] => continue,
            [y] => *y,
            [lower, upper, ..] => {
                if idx % 2 == 0 {
                    *lower
                } else {
                    *upper
                }
            }
        };
        out.push(GeometricTerm::on(&curves, x, y));
    }
    out.sort_by(|a, b| (a.rho - a.sigma).total_cmp(&(b.rho - b.sigma)));
    Ok(out)
}

/// Coupled chains of `size` terms starting at `start`, one per first move,
/// dropping those that leave the unit square.
pub fn coupled_chains_from(curves: &CurveSystem, start: &GeometricTerm, size: usize) -> Vec<Vec<GeometricTerm>> {
    let cfg = DetectionConfig::default();
    let mut out = Vec::new();
    for first in [Move::Vertical, Move::Horizontal] {
        let mut chain = vec![*start];
        let mut mv = first;
        while chain.len() < size {
            let last = *chain.last().unwrap();
            let next = match mv {
                Move::Horizontal => companion_horizontal(curves, &last, &cfg),
                Move::Vertical => companion_vertical(curves, &last, &cfg),
            };
            match next {
                Ok(Companion::Term(t)) => chain.push(t),
                _ => break,
            }
            mv = match mv {
                Move::Horizontal => Move::Vertical,
                Move::Vertical => Move::Horizontal,
            };
        }
        if chain.len() == size {
            out.push(chain);
        }
    }
    out
}

/// Candidate mixture sets: coupled chains of `size` terms from `k` sampled points.
pub fn mixture_candidates(walk: &RandomWalk, k: usize, size: usize) -> Result<Vec<Vec<GeometricTerm>>> {
    let curves = CurveSystem::new(walk);
    Ok(candidate_terms(walk, k)?
        .iter()
        .flat_map(|t| coupled_chains_from(&curves, t, size))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_fixture;

    fn ex(name: &str) -> RandomWalk {
        load_fixture(name).unwrap().0
    }

    #[test]
    fn ex5_boundary_solves() {
        let w = ex("EX5");
        let (h1, hm1) = solve_horizontal_boundary(&w, 0.5, 1.0 / 3.0, SelectionPolicy::Minimal);
        assert!((h1 - 0.1).abs() < 1e-15 && hm1 == 0.0);
        let (v1, vm1) = solve_vertical_boundary(&w, 1.0 / 3.0, 2.0 / 3.0, SelectionPolicy::Projection);
        assert!((v1 - 0.013846).abs() < 1e-6 && (vm1 - 0.020769).abs() < 1e-6);
        let (v1, vm1) = solve_vertical_boundary(&w, 1.0 / 3.0, 2.0 / 3.0, SelectionPolicy::Minimal);
        assert!(v1.abs() < 1e-15 && vm1.abs() < 1e-15);
    }

    #[test]
    fn projection_keeps_balanced_rates() {
        let w = ex("EX5");
        let (h1, hm1) = solve_horizontal_boundary(&w, 0.5, 1.0 / 3.0, SelectionPolicy::Projection);
        assert!((h1 - w.h(1)).abs() < 1e-15 && (hm1 - w.h(-1)).abs() < 1e-15);
    }

    #[test]
    fn positive_rhs_minimal_policy() {
        let (x, y) = solve_line(-1.0, 0.5, 0.2, (0.0, 0.0), SelectionPolicy::Minimal);
        assert_eq!((x, y), (0.0, 0.4));
        let (x, y) = solve_line(-1.0, 1.0, 0.0, (0.3, 0.1), SelectionPolicy::Projection);
        assert!((x - 0.2).abs() < 1e-15 && (y - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rescale_arithmetic() {
        let w = ex("EX4");
        assert_eq!(rescale(&w, 1.0).unwrap(), w);
        let r = rescale(&w, 2.0).unwrap();
        assert!((r.p(1, 0) - 0.05).abs() < 1e-15);
        assert!((r.p(0, 0) - 0.5).abs() < 1e-15);
        assert!(r.validate().is_valid());
        assert!(matches!(rescale(&w, 0.5), Err(Error::RescaleTooSmall { .. })));
    }

    #[test]
    fn ex5_product_changes_vertical_rates_only() {
        let w = ex("EX5");
        let p = build_product_perturbation(&w, 0.5, 1.0 / 3.0, SelectionPolicy::Projection).unwrap();
        assert_eq!(p.c, 1.0);
        assert!(p.q.iter().all(|d| d.region != RegionId::HorizontalAxis));
        assert!(p.q.iter().any(|d| d.region == RegionId::VerticalAxis));
        assert!(p.perturbed.validate().is_valid());
        assert_eq!(p.perturbed.interior(), p.input_rescaled.interior());
    }

    #[test]
    fn ex5_mixture_matches_hand_values() {
        let w = ex("EX5");
        let g = [
            GeometricTerm::new(0.5, 1.0 / 3.0),
            GeometricTerm::new(1.0 / 3.0, 1.0 / 3.0),
            GeometricTerm::new(1.0 / 3.0, 2.0 / 3.0),
        ];
        let p = build_mixture_perturbation(&w, &g, SelectionPolicy::Projection, false).unwrap();
        assert_eq!(p.c, 1.0);
        assert!((p.perturbed.h(1) - 0.1).abs() < 1e-12 && p.perturbed.h(-1).abs() < 1e-12);
        assert!((p.perturbed.v(1) - 0.013846).abs() < 1e-6);
        assert!((p.perturbed.v(-1) - 0.020769).abs() < 1e-6);
        assert!(p.residual <= VERIFY_TOL);
        let bar = CurveSystem::new(&p.perturbed);
        let sets = bar.intersection_sets().unwrap();
        let near = |s: &[(f64, f64)], t: &GeometricTerm| {
            s.iter().any(|q| (q.0 - t.rho).abs().max((q.1 - t.sigma).abs()) <= 1e-8)
        };
        assert!(near(&sets.h_set, &p.anchors.0));
        assert!(near(&sets.v_set, &p.anchors.1));
        assert!(build_mixture_perturbation(&w, &g[..2], SelectionPolicy::Projection, false).is_err());
    }

    #[test]
    fn candidates_lie_on_curve_in_order() {
        for name in ["EX4", "EX5"] {
            let w = ex(name);
            let c = candidate_terms(&w, 12).unwrap();
            assert_eq!(c.len(), 12);
            assert!(c.iter().all(|t| t.residual.abs() <= 1e-9 && t.inside(UNIT_MARGIN)));
            assert!(c.windows(2).all(|p| p[0].rho - p[0].sigma <= p[1].rho - p[1].sigma));
        }
        let one = candidate_terms(&ex("EX4"), 1).unwrap();
        let (lo, hi) = CurveSystem::new(&ex("EX4")).admissible_x_span(UNIT_MARGIN).unwrap();
        assert!((one[0].rho - 0.5 * (lo + hi)).abs() < 1e-12);
    }

    #[test]
    fn mixture_candidates_are_coupled() {
        let w = ex("EX4");
        let sets = mixture_candidates(&w, 12, 3).unwrap();
        assert!(!sets.is_empty());
        for g in sets {
            let first = crate::detection::first_coupling(&g, 1e-12).unwrap();
            assert!(crate::detection::is_pairwise_coupled(&g, first, 1e-12));
        }
    }
}
