//! Certified upper and lower bounds on a performance measure from a
//! perturbed walk with known invariant measure.
//!
//! The bounding problem is a pair of linear programs over component-wise
//! linear functions `Fbar`, `G` and signed bias bounds. See [`polytope`] for
//! the constraint families and [`lp`] for the solver.

pub mod lp;
pub mod polytope;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detection::GeometricTerm;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::{weight_vector, GeometricMixture, NONNEG_GRID};
use crate::model::{PerformanceFunctional, RandomWalk};
use crate::perturbation::{
    build_mixture_perturbation, build_product_perturbation, PerturbationResult, SelectionPolicy,
};

use self::lp::{LpError, Sense, SimplexOptions};
pub use self::polytope::{build_polytope, BiasFunction, BiasPartition, Polytope};

/// Per-region affine function with the same layout as a performance functional.
pub type ComponentWiseLinearFunction = PerformanceFunctional;

/// Grid used to screen mixture targets for negative mass.
pub const MIXTURE_SCREEN_GRID: usize = 60;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub partition: BiasPartition,
    #[serde(skip)]
    pub simplex: SimplexOptions,
}

/// `Σ m(i,j) f(i,j)` in closed form.
pub fn weighted_sum(f: &ComponentWiseLinearFunction, mbar: &GeometricMixture) -> Result<f64> {
    let w = weight_vector(mbar)?;
    Ok(w.iter().zip(f.to_array()).map(|(a, b)| a * b).sum())
}

/// Affine piece `c0 + ci i + cj j` of one bias-bound function on one state class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPiece {
    pub function: BiasFunction,
    pub class: (usize, usize),
    pub affine: [f64; 3],
}

/// Signed bias bounds: `lower ≤ F^t(n + d) - F^t(n) ≤ upper` for the east and
/// north steps; the west and south steps follow by reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasBoundSet {
    pub partition: BiasPartition,
    pub coefficients: BTreeMap<String, f64>,
    pub pieces: Vec<BiasPiece>,
}

const CLASSES: usize = polytope::SYMBOLIC + 1;

impl BiasBoundSet {
    fn from_solution(p: &Polytope, x: &[f64]) -> Self {
        let mut pieces = Vec::with_capacity(4 * CLASSES * CLASSES);
        for function in BiasFunction::ALL {
            for cx in 0..CLASSES {
                for cy in 0..CLASSES {
                    pieces.push(BiasPiece {
                        function,
                        class: (cx, cy),
                        affine: p.bias_piece(x, function, (cx, cy)),
                    });
                }
            }
        }
        Self {
            partition: p.partition,
            coefficients: p.bias_coefficients(x),
            pieces,
        }
    }

    pub fn value(&self, func: BiasFunction, i: usize, j: usize) -> f64 {
        let f = BiasFunction::ALL.iter().position(|&g| g == func).unwrap();
        let (cx, cy) = (i.min(CLASSES - 1), j.min(CLASSES - 1));
        let a = self.pieces[(f * CLASSES + cx) * CLASSES + cy].affine;
        a[0] + a[1] * i as f64 + a[2] * j as f64
    }

    /// Interval containing `F^t((i,j) + d) - F^t(i,j)` for a unit step `d`.
    pub fn interval(&self, d: (i32, i32), i: usize, j: usize) -> Option<(f64, f64)> {
        use BiasFunction::*;
        match d {
            (1, 0) => Some((self.value(LowerEast, i, j), self.value(UpperEast, i, j))),
            (0, 1) => Some((self.value(LowerNorth, i, j), self.value(UpperNorth, i, j))),
            (-1, 0) if i > 0 => Some((-self.value(UpperEast, i - 1, j), -self.value(LowerEast, i - 1, j))),
            (0, -1) if j > 0 => Some((-self.value(UpperNorth, i, j - 1), -self.value(LowerNorth, i, j - 1))),
            _ => None,
        }
    }

    /// Absolute bound `β_d(i,j)`.
    pub fn beta(&self, d: (i32, i32), i: usize, j: usize) -> Option<f64> {
        self.interval(d, i, j).map(|(lo, hi)| hi.max(-lo))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub fbar: ComponentWiseLinearFunction,
    pub g: ComponentWiseLinearFunction,
    pub bias: BiasBoundSet,
    pub iterations: usize,
    /// Largest constraint violation of the returned point.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub rows: usize,
    pub variables: usize,
    pub phase_one_iterations: usize,
    pub families: BTreeMap<String, usize>,
    /// Rows with zero slack at the upper-bound optimizer, per family.
    pub active_upper: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub f_low: f64,
    pub f_up: f64,
    pub upper: Optimizer,
    pub lower: Optimizer,
    pub diagnostics: BoundDiagnostics,
}

impl BoundResult {
    pub fn gap(&self) -> f64 {
        self.f_up - self.f_low
    }
}

fn infeasibility_advice(e: LpError) -> Error {
    match e {
        LpError::Infeasible { infeasibility, .. } => Error::InvalidGamma(format!(
            "bounding program infeasible (phase-one residual {infeasibility:e}); try another perturbation"
        )),
        other => Error::Lp(other),
    }
}

fn optimizer(p: &Polytope, sol: &lp::LpSolution) -> Optimizer {
    Optimizer {
        fbar: p.function(&sol.x, "Fbar"),
        g: p.function(&sol.x, "G"),
        bias: BiasBoundSet::from_solution(p, &sol.x),
        iterations: sol.iterations,
        max_violation: p.lp.max_violation(&sol.x),
    }
}

/// Solves both bounding programs for reward `f` and a built perturbation of `walk`.
pub fn bound_performance(
    walk: &RandomWalk,
    f: &PerformanceFunctional,
    perturbation: &PerturbationResult,
    opts: &BoundOptions,
) -> Result<BoundResult> {
    if !f.is_nonnegative() {
        return Err(Error::NegativeReward);
    }
    let expected = crate::perturbation::rescale(walk, perturbation.c)?;
    if expected.interior() != perturbation.input_rescaled.interior() {
        return Err(Error::InvalidWalk(
            "perturbation was built from a different walk".into(),
        ));
    }
    let polytope = build_polytope(&perturbation.input_rescaled, &perturbation.q, f, opts.partition)
        .map_err(infeasibility_advice)?;
    let w = weight_vector(&perturbation.target_measure)?;
    let n = polytope.lp.num_variables();
    let (fb, g) = (polytope.fbar_vars(), polytope.g_vars());
    let mut up = vec![0.0; n];
    let mut low = vec![0.0; n];
    for k in 0..8 {
        up[fb[k]] += w[k];
        up[g[k]] += w[k];
        low[fb[k]] += w[k];
        low[g[k]] -= w[k];
    }
    let sols = polytope
        .lp
        .solve_objectives(&[(Sense::Minimize, up), (Sense::Maximize, low)], &opts.simplex)
        .map_err(infeasibility_advice)?;
    let (su, sl) = (&sols[0], &sols[1]);
    let mut active_upper = BTreeMap::new();
    for c in &polytope.lp.constraints {
        let lhs: f64 = c.coeffs.iter().map(|&(v, a)| a * su.x[v]).sum();
        if (c.rhs - lhs).abs() <= 1e-9 * (1.0 + c.rhs.abs()) {
            let fam = c.label.split('@').next().unwrap_or("").to_string();
            *active_upper.entry(fam).or_insert(0) += 1;
        }
    }
    let result = BoundResult {
        f_low: sl.objective,
        f_up: su.objective,
        upper: optimizer(&polytope, su),
        lower: optimizer(&polytope, sl),
        diagnostics: BoundDiagnostics {
            rows: polytope.lp.num_constraints(),
            variables: n,
            phase_one_iterations: su.phase_one_iterations,
            families: polytope.family_counts(),
            active_upper,
        },
    };
    debug_assert!(result.f_low <= result.f_up + 1e-9);
    Ok(result)
}

/// One row of a candidate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub candidate_index: usize,
    pub rho: f64,
    pub sigma: f64,
    pub c: Option<f64>,
    pub f_low: Option<f64>,
    pub f_up: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub min_up: Option<f64>,
    pub max_low: Option<f64>,
}

impl SweepTable {
    fn from_rows(rows: Vec<SweepRow>) -> Self {
        let min_up = rows.iter().filter_map(|r| r.f_up).reduce(f64::min);
        let max_low = rows.iter().filter_map(|r| r.f_low).reduce(f64::max);
        Self { rows, min_up, max_low }
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("candidate_index,rho,sigma,C,F_low,F_up\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.candidate_index,
                r.rho,
                r.sigma,
                cell(r.c),
                cell(r.f_low),
                cell(r.f_up)
            ));
        }
        s
    }
}

/// Product-form bounds for each candidate term; failures are recorded per row.
pub fn sweep_bounds(
    walk: &RandomWalk,
    f: &PerformanceFunctional,
    candidates: &[GeometricTerm],
    policy: SelectionPolicy,
    opts: &BoundOptions,
    exec: Execution,
) -> SweepTable {
    let rows = exec.map_range(candidates.len(), |k| {
        let t = candidates[k];
        let mut row = SweepRow {
            candidate_index: k,
            rho: t.rho,
            sigma: t.sigma,
            c: None,
            f_low: None,
            f_up: None,
            error: None,
        };
        match build_product_perturbation(walk, t.rho, t.sigma, policy)
            .and_then(|p| bound_performance(walk, f, &p, opts).map(|b| (p, b)))
        {
            Ok((p, b)) => {
                row.c = Some(p.c);
                row.f_low = Some(b.f_low);
                row.f_up = Some(b.f_up);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    });
    SweepTable::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureBound {
    pub set_index: usize,
    pub gamma: Vec<GeometricTerm>,
    pub perturbation: PerturbationResult,
    pub bound: BoundResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSearch {
    /// Smallest-gap result among the admissible sets.
    pub best: Option<MixtureBound>,
    pub evaluated: usize,
    pub skipped: Vec<(usize, String)>,
}

fn screen(m: &GeometricMixture) -> Option<String> {
    if m.has_negative_mass() {
        return Some(format!("negative mass on the {NONNEG_GRID}x{NONNEG_GRID} grid"));
    }
    let (min, at) = m.min_on_grid(MIXTURE_SCREEN_GRID);
    (min < -1e-12).then(|| format!("negative mass {min:e} at {at:?}"))
}

/// Bounds every candidate set as a mixture target and keeps the tightest.
pub fn best_mixture(
    walk: &RandomWalk,
    f: &PerformanceFunctional,
    sets: &[Vec<GeometricTerm>],
    policy: SelectionPolicy,
    opts: &BoundOptions,
    exec: Execution,
) -> MixtureSearch {
    let outcomes = exec.map_range(sets.len(), |k| -> std::result::Result<MixtureBound, String> {
        let p = build_mixture_perturbation(walk, &sets[k], policy, false).map_err(|e| e.to_string())?;
        if let Some(why) = screen(&p.target_measure) {
            return Err(why);
        }
        let bound = bound_performance(walk, f, &p, opts).map_err(|e| e.to_string())?;
        Ok(MixtureBound {
            set_index: k,
            gamma: sets[k].clone(),
            perturbation: p,
            bound,
        })
    });
    let mut search = MixtureSearch {
        best: None,
        evaluated: 0,
        skipped: Vec::new(),
    };
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(mb) => {
                search.evaluated += 1;
                if search.best.as_ref().is_none_or(|b| mb.bound.gap() < b.bound.gap()) {
                    search.best = Some(mb);
                }
            }
            Err(e) => search.skipped.push((k, e)),
        }
    }
    search
}
