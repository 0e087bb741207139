//! Decides whether the invariant measure is a finite sum of geometric terms
//! by chaining Vieta companions along `Q` from the boundary intersection sets.

use serde::{Deserialize, Serialize};

use crate::curves::{BranchPoints, Curve, CurveSystem, IntersectionSets, Point, CURVE_TOL};
use crate::error::{Error, Result};
use crate::model::RandomWalk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Max-norm distance under which two terms are identified.
    pub membership_tol: f64,
    pub margin: f64,
    pub step_cap: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            membership_tol: 1e-8,
            margin: 1e-9,
            step_cap: 10_000,
        }
    }
}

/// A point `(rho, sigma)` of `Q`; `residual` is `Q(rho, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricTerm {
    pub rho: f64,
    pub sigma: f64,
    pub residual: f64,
}

impl GeometricTerm {
    pub fn new(rho: f64, sigma: f64) -> Self {
        Self {
            rho,
            sigma,
            residual: 0.0,
        }
    }

    pub fn on(curves: &CurveSystem, rho: f64, sigma: f64) -> Self {
        Self {
            rho,
            sigma,
            residual: curves.eval(Curve::Q, rho, sigma),
        }
    }

    pub fn point(&self) -> Point {
        (self.rho, self.sigma)
    }

    pub fn distance(&self, other: &GeometricTerm) -> f64 {
        (self.rho - other.rho).abs().max((self.sigma - other.sigma).abs())
    }

    pub fn inside(&self, margin: f64) -> bool {
        self.rho > margin && self.rho < 1.0 - margin && self.sigma > margin && self.sigma < 1.0 - margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Horizontal,
    Vertical,
}

impl Move {
    fn flip(self) -> Move {
        match self {
            Move::Horizontal => Move::Vertical,
            Move::Vertical => Move::Horizontal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    H,
    V,
}

/// Membership of a term in one of the intersection sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetRef {
    pub set: SetKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    LeftUnitSquare,
    HitHSet,
    HitVSet,
    StepCap,
}

/// Result of one companion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Companion {
    Term(GeometricTerm),
    /// The companion leaves the open square, equals its source, or sits at infinity.
    Exit {
        degenerate: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledChain {
    pub terms: Vec<GeometricTerm>,
    pub origin: SetRef,
    pub first_move: Move,
    pub exit_reason: ExitReason,
    /// Set the final term belongs to when the chain stopped on a valid hit.
    pub hit: Option<SetRef>,
    /// Membership hits with the wrong parity, as `(term index, set)`.
    pub ignored_hits: Vec<(usize, SetRef)>,
    /// Final term also lies in the other set.
    pub ambiguous: bool,
    /// Chain ended because a companion coefficient vanished.
    pub degenerate_exit: bool,
}

/// Step bound `6 / min(D1, D2) + 4`, or undefined when `min(D1, D2)` vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TerminationBound {
    Finite { steps: f64, d1: f64, d2: f64 },
    Undefined { d1: f64, d2: f64 },
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Representable,
    NotRepresentable,
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sets: IntersectionSets,
    pub chains: Vec<CoupledChain>,
    pub termination: TerminationBound,
    /// Chains whose final term matched both sets at once.
    pub ambiguous: Vec<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub kind: OutcomeKind,
    pub representable: bool,
    /// Terms in canonical order.
    pub gamma: Vec<GeometricTerm>,
    /// Sets containing the first and last term of `gamma`.
    pub endpoints: Option<(SetRef, SetRef)>,
    pub parity: Option<Parity>,
    pub diagnostics: Diagnostics,
}

fn check_on_curve(curves: &CurveSystem, t: &GeometricTerm) -> Result<()> {
    let r = curves.eval(Curve::Q, t.rho, t.sigma);
    if r.abs() > CURVE_TOL {
        return Err(Error::NotOnCurve(t.rho, t.sigma, r));
    }
    Ok(())
}

/// The other point of `Q` at the same `sigma`.
pub fn companion_horizontal(curves: &CurveSystem, t: &GeometricTerm, cfg: &DetectionConfig) -> Result<Companion> {
    check_on_curve(curves, t)?;
    let lead = curves.abar.eval(t.sigma);
    if lead == 0.0 || t.rho == 0.0 {
        return Ok(Companion::Exit { degenerate: true });
    }
    let rho = curves.cbar.eval(t.sigma) / (lead * t.rho);
    Ok(finish(curves, t, GeometricTerm::on(curves, rho, t.sigma), cfg))
}

/// The other point of `Q` at the same `rho`.
pub fn companion_vertical(curves: &CurveSystem, t: &GeometricTerm, cfg: &DetectionConfig) -> Result<Companion> {
    check_on_curve(curves, t)?;
    let lead = curves.a.eval(t.rho);
    if lead == 0.0 || t.sigma == 0.0 {
        return Ok(Companion::Exit { degenerate: true });
    }
    let sigma = curves.c.eval(t.rho) / (lead * t.sigma);
    Ok(finish(curves, t, GeometricTerm::on(curves, t.rho, sigma), cfg))
}

fn finish(_: &CurveSystem, from: &GeometricTerm, to: GeometricTerm, cfg: &DetectionConfig) -> Companion {
    if !to.rho.is_finite() || !to.sigma.is_finite() || !to.inside(cfg.margin) {
        return Companion::Exit { degenerate: false };
    }
    if to.distance(from) <= cfg.membership_tol {
        return Companion::Exit { degenerate: false };
    }
    Companion::Term(to)
}

fn companion(curves: &CurveSystem, t: &GeometricTerm, mv: Move, cfg: &DetectionConfig) -> Result<Companion> {
    match mv {
        Move::Horizontal => companion_horizontal(curves, t, cfg),
        Move::Vertical => companion_vertical(curves, t, cfg),
    }
}

fn find(set: &[Point], t: &GeometricTerm, tol: f64, skip: Option<usize>) -> Option<usize> {
    set.iter()
        .enumerate()
        .position(|(k, p)| Some(k) != skip && (p.0 - t.rho).abs().max((p.1 - t.sigma).abs()) <= tol)
}

/// Alternating companions from `start` until the square is left or a
/// parity-valid membership hit ends the chain.
///
/// For a chain started in `H` with a horizontal move, a term with even
/// 1-based index ends the chain when it lies in `H`, an odd one when it lies
/// in `V`; the vertical variant mirrors this.
pub fn build_chain(
    curves: &CurveSystem,
    sets: &IntersectionSets,
    origin: SetRef,
    first_move: Move,
    cfg: &DetectionConfig,
) -> Result<CoupledChain> {
    let start = match origin.set {
        SetKind::H => sets.h_set[origin.index],
        SetKind::V => sets.v_set[origin.index],
    };
    let (same, other) = match origin.set {
        SetKind::H => (&sets.h_set, &sets.v_set),
        SetKind::V => (&sets.v_set, &sets.h_set),
    };
    let (same_kind, other_kind) = match origin.set {
        SetKind::H => (SetKind::H, SetKind::V),
        SetKind::V => (SetKind::V, SetKind::H),
    };
    let mut chain = CoupledChain {
        terms: vec![GeometricTerm::on(curves, start.0, start.1)],
        origin,
        first_move,
        exit_reason: ExitReason::LeftUnitSquare,
        hit: None,
        ignored_hits: Vec::new(),
        ambiguous: false,
        degenerate_exit: false,
    };
    let mut mv = first_move;
    loop {
        if chain.terms.len() >= cfg.step_cap {
            return Err(Error::StepCap {
                cap: cfg.step_cap,
                partial: chain.terms.iter().map(GeometricTerm::point).collect(),
            });
        }
        let last = *chain.terms.last().unwrap();
        let next = match companion(curves, &last, mv, cfg)? {
            Companion::Term(t) => t,
            Companion::Exit { degenerate } => {
                chain.degenerate_exit = degenerate;
                return Ok(chain);
            }
        };
        if chain.terms.iter().any(|t| t.distance(&next) <= CURVE_TOL) {
            return Err(Error::Cycle(next.rho, next.sigma));
        }
        chain.terms.push(next);
        let n = chain.terms.len();
        let in_same = find(same, &next, cfg.membership_tol, Some(origin.index));
        let in_other = find(other, &next, cfg.membership_tol, None);
        let same_ref = in_same.map(|index| SetRef { set: same_kind, index });
        let other_ref = in_other.map(|index| SetRef { set: other_kind, index });
        let valid = if n.is_multiple_of(2) { same_ref } else { other_ref };
        let invalid = if n.is_multiple_of(2) { other_ref } else { same_ref };
        if let Some(hit) = valid {
            chain.exit_reason = match hit.set {
                SetKind::H => ExitReason::HitHSet,
                SetKind::V => ExitReason::HitVSet,
            };
            chain.ambiguous = invalid.is_some();
            chain.hit = Some(hit);
            return Ok(chain);
        }
        if let Some(r) = invalid {
            chain.ignored_hits.push((n - 1, r));
        }
        mv = mv.flip();
    }
}

/// `M(R) = 6 / min(D1, D2) + 4`.
pub fn steps_from_min(d: f64) -> f64 {
    6.0 / d + 4.0
}

/// Step bound with `D1 = delta_y(x_b) / A(x_t)` and `D2 = delta_y(x_t) / A(x_t)`.
pub fn termination_bound(curves: &CurveSystem, bp: &BranchPoints) -> TerminationBound {
    let den = curves.a.eval(bp.xt());
    let d1 = curves.delta_y.eval(bp.xb()) / den;
    let d2 = curves.delta_y.eval(bp.xt()) / den;
    let d = d1.min(d2);
    if !d.is_finite() || d <= 1e-12 {
        TerminationBound::Undefined { d1, d2 }
    } else {
        TerminationBound::Finite {
            steps: steps_from_min(d),
            d1,
            d2,
        }
    }
}

fn unsupported(sets: IntersectionSets, note: String) -> DetectionOutcome {
    DetectionOutcome {
        kind: OutcomeKind::Unsupported,
        representable: false,
        gamma: Vec::new(),
        endpoints: None,
        parity: None,
        diagnostics: Diagnostics {
            sets,
            chains: Vec::new(),
            termination: TerminationBound::Unavailable,
            ambiguous: Vec::new(),
            note: Some(note),
        },
    }
}

/// Runs the full detection procedure on a walk.
pub fn detect(walk: &RandomWalk, cfg: &DetectionConfig) -> Result<DetectionOutcome> {
    walk.validate().into_result()?;
    if walk.is_unsupported_regime() {
        return Ok(unsupported(
            IntersectionSets::default(),
            "no mass towards north, northeast or east; the measure is not a finite sum".into(),
        ));
    }
    if walk.down_mass() <= 0.0 || walk.left_mass() <= 0.0 {
        return Ok(unsupported(
            IntersectionSets::default(),
            "no south- or west-bound interior mass; boundary curves have no explicit form".into(),
        ));
    }
    let curves = CurveSystem::new(walk);
    let sets = curves.intersection_sets()?;
    let termination = curves
        .branch_points()
        .map(|bp| termination_bound(&curves, &bp))
        .unwrap_or(TerminationBound::Unavailable);
    let mut diagnostics = Diagnostics {
        sets: sets.clone(),
        chains: Vec::new(),
        termination,
        ambiguous: Vec::new(),
        note: None,
    };

    for (a, &p) in sets.h_set.iter().enumerate() {
        let t = GeometricTerm::on(&curves, p.0, p.1);
        if let Some(b) = find(&sets.v_set, &t, cfg.membership_tol, None) {
            return Ok(DetectionOutcome {
                kind: OutcomeKind::Representable,
                representable: true,
                gamma: vec![t],
                endpoints: Some((
                    SetRef {
                        set: SetKind::H,
                        index: a,
                    },
                    SetRef {
                        set: SetKind::V,
                        index: b,
                    },
                )),
                parity: Some(Parity::Odd),
                diagnostics,
            });
        }
    }

    let origins = (0..sets.h_set.len())
        .map(|index| (SetRef { set: SetKind::H, index }, Move::Horizontal))
        .chain((0..sets.v_set.len()).map(|index| (SetRef { set: SetKind::V, index }, Move::Vertical)));
    let mut found: Option<usize> = None;
    for (origin, mv) in origins {
        let chain = build_chain(&curves, &sets, origin, mv, cfg)?;
        let k = diagnostics.chains.len();
        if chain.ambiguous {
            diagnostics.ambiguous.push(k);
        }
        if found.is_none() && chain.hit.is_some() {
            found = Some(k);
        }
        diagnostics.chains.push(chain);
    }

    let Some(k) = found else {
        return Ok(DetectionOutcome {
            kind: OutcomeKind::NotRepresentable,
            representable: false,
            gamma: Vec::new(),
            endpoints: None,
            parity: None,
            diagnostics,
        });
    };
    let chain = &diagnostics.chains[k];
    let hit = chain.hit.unwrap();
    let mut gamma = chain.terms.clone();
    let mut endpoints = (chain.origin, hit);
    let parity = if gamma.len() % 2 == 1 {
        Parity::Odd
    } else {
        Parity::Even
    };
    let reverse = match parity {
        Parity::Odd => endpoints.0.set == SetKind::V,
        Parity::Even => gamma.last().unwrap().rho > gamma[0].rho,
    };
    if reverse {
        gamma.reverse();
        endpoints = (endpoints.1, endpoints.0);
    }
    Ok(DetectionOutcome {
        kind: OutcomeKind::Representable,
        representable: true,
        gamma,
        endpoints: Some(endpoints),
        parity: Some(parity),
        diagnostics,
    })
}

/// Checks that consecutive terms alternate sharing exactly one coordinate,
/// starting with `first`, and that no term repeats.
pub fn is_pairwise_coupled(terms: &[GeometricTerm], first: Move, tol: f64) -> bool {
    let mut mv = first;
    for w in terms.windows(2) {
        let same_rho = (w[0].rho - w[1].rho).abs() <= tol;
        let same_sigma = (w[0].sigma - w[1].sigma).abs() <= tol;
        let ok = match mv {
            Move::Horizontal => same_sigma && !same_rho,
            Move::Vertical => same_rho && !same_sigma,
        };
        if !ok {
            return false;
        }
        mv = mv.flip();
    }
    terms
        .iter()
        .enumerate()
        .all(|(i, a)| terms[i + 1..].iter().all(|b| a.distance(b) > tol))
}

/// First coupling of a canonical chain: horizontal when the first two terms share `sigma`.
pub fn first_coupling(terms: &[GeometricTerm], tol: f64) -> Option<Move> {
    let (a, b) = (terms.first()?, terms.get(1)?);
    if (a.sigma - b.sigma).abs() <= tol {
        Some(Move::Horizontal)
    } else if (a.rho - b.rho).abs() <= tol {
        Some(Move::Vertical)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_fixture;

    fn outcome(name: &str) -> DetectionOutcome {
        detect(&load_fixture(name).unwrap().0, &DetectionConfig::default()).unwrap()
    }

    #[test]
    fn ex5_companions() {
        let curves = CurveSystem::new(&load_fixture("EX5").unwrap().0);
        let cfg = DetectionConfig::default();
        let t = GeometricTerm::on(&curves, 0.5, 1.0 / 3.0);
        let Companion::Term(h) = companion_horizontal(&curves, &t, &cfg).unwrap() else {
            panic!("expected a term")
        };
        assert!((h.rho - 1.0 / 3.0).abs() < 1e-12 && (h.sigma - 1.0 / 3.0).abs() < 1e-15);
        let Companion::Term(v) = companion_vertical(&curves, &h, &cfg).unwrap() else {
            panic!("expected a term")
        };
        assert!((v.sigma - 2.0 / 3.0).abs() < 1e-12);
        let off = GeometricTerm::new(0.5, 0.9);
        assert!(matches!(
            companion_vertical(&curves, &off, &cfg),
            Err(Error::NotOnCurve(..))
        ));
    }

    #[test]
    fn companion_at_branch_point_exits() {
        let curves = CurveSystem::new(&load_fixture("EX5").unwrap().0);
        let bp = curves.branch_points().unwrap();
        let cfg = DetectionConfig::default();
        for (x, y) in bp.horizontal {
            let t = GeometricTerm::on(&curves, x, y);
            if t.inside(cfg.margin) && t.residual.abs() <= CURVE_TOL {
                assert!(matches!(
                    companion_vertical(&curves, &t, &cfg).unwrap(),
                    Companion::Exit { .. }
                ));
            }
        }
    }

    #[test]
    fn fixture_outcomes() {
        let ex1 = outcome("EX1");
        assert!(ex1.representable);
        assert_eq!(ex1.gamma.len(), 3);
        let (a, b) = ex1.endpoints.unwrap();
        assert_eq!((a.set, b.set), (SetKind::H, SetKind::V));
        assert_eq!(ex1.parity, Some(Parity::Odd));

        let ex2 = outcome("EX2");
        assert_eq!(ex2.kind, OutcomeKind::NotRepresentable);

        let ex3 = outcome("EX3");
        assert!(ex3.representable);
        assert_eq!(ex3.gamma.len(), 5);
        assert!(is_pairwise_coupled(&ex3.gamma, Move::Horizontal, 1e-9));
    }

    #[test]
    fn termination_formula() {
        assert!((steps_from_min(0.6) - 14.0).abs() < 1e-12);
        let curves = CurveSystem::new(&load_fixture("EX5").unwrap().0);
        let bp = curves.branch_points().unwrap();
        assert!(matches!(
            termination_bound(&curves, &bp),
            TerminationBound::Undefined { .. }
        ));
    }

    #[test]
    fn unsupported_regime_is_reported() {
        let w = RandomWalk::from_rates(
            &[((-1, 0), 0.3), ((0, -1), 0.3), ((-1, -1), 0.2)],
            (0.2, 0.0),
            (0.2, 0.0),
        );
        let out = detect(&w, &DetectionConfig::default()).unwrap();
        assert_eq!(out.kind, OutcomeKind::Unsupported);
    }

    #[test]
    fn deterministic() {
        assert_eq!(outcome("EX3"), outcome("EX3"));
    }
}
