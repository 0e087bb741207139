//! Brute-force reference computations on a truncated `N x N` lattice.
//!
//! Transitions leaving the box are folded into the self-loop, so every
//! truncated chain stays stochastic. States are indexed row-major in `i`.

use faer::prelude::*;
use faer::sparse::SparseColMat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::balance_residual_with;
use crate::model::{PerformanceFunctional, RandomWalk, RegionId};
use crate::perturbation::RateDifference;

pub const TAIL_WARN: f64 = 1e-6;
pub const CONDITION_TOL: f64 = 1e-6;
const GS_DAMPING: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarySolver {
    /// Sparse LU on the balance system with `pi(0,0)` pinned.
    #[default]
    Direct,
    /// Power iteration, switching to Gauss-Seidel at the iteration cap.
    Power,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub solver: StationarySolver,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            solver: StationarySolver::Direct,
            tol: 1e-12,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub solver: StationarySolver,
    pub iterations: usize,
    /// `max |pi P - pi|` after normalization.
    pub residual: f64,
    /// Mass on the outer two layers of the box.
    pub tail_mass: f64,
    pub warnings: Vec<String>,
}

/// Truncated chain: outgoing transitions per state and its stationary vector.
#[derive(Debug, Clone)]
pub struct TruncatedLattice {
    pub size: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
    pub pi: Vec<f64>,
    pub stats: ConvergenceStats,
}

struct Transitions {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

fn transitions(walk: &RandomWalk, n: usize) -> Transitions {
    let kernels = RegionId::ALL.map(|r| walk.kernel(r));
    let mut offsets = Vec::with_capacity(n * n + 1);
    let mut targets = Vec::with_capacity(9 * n * n);
    let mut probs = Vec::with_capacity(9 * n * n);
    offsets.push(0);
    for i in 0..n {
        for j in 0..n {
            let here = i * n + j;
            let region = RegionId::of(i, j);
            let k = &kernels[RegionId::ALL.iter().position(|&r| r == region).unwrap()];
            let mut stay = 0.0;
            for ((dx, dy), p) in k.entries() {
                if p == 0.0 {
                    continue;
                }
                let (ti, tj) = (i as i64 + dx as i64, j as i64 + dy as i64);
                if (dx, dy) == (0, 0) || ti >= n as i64 || tj >= n as i64 || ti < 0 || tj < 0 {
                    stay += p;
                } else {
                    targets.push((ti as usize * n + tj as usize) as u32);
                    probs.push(p);
                }
            }
            if stay > 0.0 {
                targets.push(here as u32);
                probs.push(stay);
            }
            offsets.push(targets.len());
        }
    }
    Transitions {
        offsets,
        targets,
        probs,
    }
}

impl Transitions {
    fn row(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[s]..self.offsets[s + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.probs[r])
            .map(|(&t, &p)| (t as usize, p))
    }

    /// `x P` for a row vector `x`.
    fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, &xs) in x.iter().enumerate() {
            if xs != 0.0 {
                for (t, p) in self.row(s) {
                    out[t] += xs * p;
                }
            }
        }
    }

    fn incoming(&self, states: usize) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
        let mut count = vec![0usize; states + 1];
        for &t in &self.targets {
            count[t as usize + 1] += 1;
        }
        for k in 0..states {
            count[k + 1] += count[k];
        }
        let mut fill = count.clone();
        let mut src = vec![0u32; self.targets.len()];
        let mut pr = vec![0.0; self.targets.len()];
        for s in 0..states {
            for (t, p) in self.row(s) {
                src[fill[t]] = s as u32;
                pr[fill[t]] = p;
                fill[t] += 1;
            }
        }
        (count, src, pr)
    }
}

fn normalize(pi: &mut [f64]) {
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
}

fn solve_direct(tr: &Transitions, states: usize) -> Result<Vec<f64>> {
    // Unknowns are pi(1..) with pi(0) = 1; equation k reads sum_l pi_l P(l,k) - pi_k = 0.
    let m = states - 1;
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(tr.targets.len() + m);
    let mut rhs = Mat::<f64>::zeros(m, 1);
    for (t, p) in tr.row(0) {
        if t != 0 {
            rhs.write(t - 1, 0, -p);
        }
    }
    for s in 1..states {
        let mut diag = -1.0;
        for (t, p) in tr.row(s) {
            if t == s {
                diag += p;
            } else if t != 0 {
                trip.push((t - 1, s - 1, p));
            }
        }
        trip.push((s - 1, s - 1, diag));
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &trip)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::Factorization(format!("{e:?}")))?;
    lu.solve_in_place(rhs.as_mut());
    let mut pi = Vec::with_capacity(states);
    pi.push(1.0);
    pi.extend((0..m).map(|k| rhs.read(k, 0)));
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("non-finite solution".into()));
    }
    normalize(&mut pi);
    Ok(pi)
}

fn solve_power(tr: &Transitions, states: usize, tol: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0; states];
    for it in 1..=max_iter {
        // Lazy chain (P + I) / 2: same fixed point, no periodic oscillation.
        tr.left_mul(&pi, &mut next);
        next.iter_mut().zip(&pi).for_each(|(a, b)| *a = 0.5 * (*a + b));
        normalize(&mut next);
        let change = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().copied().fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if change <= tol * scale {
            return (pi, it, true);
        }
    }
    (pi, max_iter, false)
}

fn solve_gauss_seidel(
    tr: &Transitions,
    states: usize,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize, bool) {
    let (off, src, pr) = tr.incoming(states);
    let mut pi = start;
    for it in 1..=max_iter {
        let mut change: f64 = 0.0;
        for k in 0..states {
            let mut inflow = 0.0;
            let mut stay = 0.0;
            for e in off[k]..off[k + 1] {
                let s = src[e] as usize;
                if s == k {
                    stay += pr[e];
                } else {
                    inflow += pi[s] * pr[e];
                }
            }
            let v = if stay < 1.0 { inflow / (1.0 - stay) } else { pi[k] };
            let v = GS_DAMPING * v + (1.0 - GS_DAMPING) * pi[k];
            change = change.max((v - pi[k]).abs());
            pi[k] = v;
        }
        let total: f64 = pi.iter().sum();
        let scale = pi.iter().copied().fold(0.0, f64::max);
        normalize(&mut pi);
        if change <= tol * scale.max(f64::MIN_POSITIVE) * total.max(1.0) {
            return (pi, it, true);
        }
    }
    (pi, max_iter, false)
}

fn fixed_point_residual(tr: &Transitions, pi: &[f64]) -> f64 {
    let mut out = vec![0.0; pi.len()];
    tr.left_mul(pi, &mut out);
    out.iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Stationary distribution of `walk` truncated to `{0..n-1}^2`.
pub fn stationary_truncated(walk: &RandomWalk, n: usize) -> Result<TruncatedLattice> {
    stationary_truncated_with(walk, n, &SolverOptions::default())
}

pub fn stationary_truncated_with(walk: &RandomWalk, n: usize, opts: &SolverOptions) -> Result<TruncatedLattice> {
    if n < 3 {
        return Err(Error::TruncationSize(n));
    }
    let states = n * n;
    let tr = transitions(walk, n);
    let mut warnings = Vec::new();
    let (pi, iterations, solver) = match opts.solver {
        StationarySolver::Direct => (solve_direct(&tr, states)?, 1, StationarySolver::Direct),
        StationarySolver::GaussSeidel => {
            let start = vec![1.0 / states as f64; states];
            let (pi, it, ok) = solve_gauss_seidel(&tr, states, start, opts.tol, opts.max_iter);
            if !ok {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: fixed_point_residual(&tr, &pi),
                });
            }
            (pi, it, StationarySolver::GaussSeidel)
        }
        StationarySolver::Power => {
            let (pi, it, ok) = solve_power(&tr, states, opts.tol, opts.max_iter);
            if ok {
                (pi, it, StationarySolver::Power)
            } else {
                warnings.push(format!(
                    "power iteration stalled after {it} iterations; switched to Gauss-Seidel"
                ));
                let (pi, it2, ok) = solve_gauss_seidel(&tr, states, pi, opts.tol, opts.max_iter);
                if !ok {
                    return Err(Error::NoConvergence {
                        iterations: it + it2,
                        residual: fixed_point_residual(&tr, &pi),
                    });
                }
                (pi, it + it2, StationarySolver::GaussSeidel)
            }
        }
    };
    let residual = fixed_point_residual(&tr, &pi);
    let tail_mass: f64 = (0..states)
        .filter(|&k| k / n + 2 >= n || k % n + 2 >= n)
        .map(|k| pi[k])
        .sum();
    if tail_mass > TAIL_WARN {
        warnings.push(format!(
            "tail mass {tail_mass:.3e} on the outer two layers; truncation may be too small"
        ));
    }
    Ok(TruncatedLattice {
        size: n,
        offsets: tr.offsets,
        targets: tr.targets,
        probs: tr.probs,
        pi,
        stats: ConvergenceStats {
            solver,
            iterations,
            residual,
            tail_mass,
            warnings,
        },
    })
}

impl TruncatedLattice {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.size + j]
    }

    /// Outgoing `(target state, probability)` pairs of state `(i, j)`.
    pub fn row(&self, i: usize, j: usize) -> Vec<((usize, usize), f64)> {
        let s = i * self.size + j;
        (self.offsets[s]..self.offsets[s + 1])
            .map(|e| {
                let t = self.targets[e] as usize;
                ((t / self.size, t % self.size), self.probs[e])
            })
            .collect()
    }

    pub fn expectation(&self, f: &PerformanceFunctional) -> f64 {
        let n = self.size;
        self.pi
            .iter()
            .enumerate()
            .map(|(k, &p)| p * f.evaluate(k / n, k % n))
            .sum()
    }

    /// `max |pi P - pi|` for this lattice's own transitions.
    pub fn self_residual(&self) -> f64 {
        let tr = Transitions {
            offsets: self.offsets.clone(),
            targets: self.targets.clone(),
            probs: self.probs.clone(),
        };
        fixed_point_residual(&tr, &self.pi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub size: usize,
    /// `|value(N) - value(N/2)|` when requested.
    pub indicator: Option<f64>,
    pub origin_mass: f64,
    pub stats: ConvergenceStats,
}

pub fn oracle_performance(
    walk: &RandomWalk,
    f: &PerformanceFunctional,
    n: usize,
    richardson: bool,
) -> Result<OracleEstimate> {
    if n < 8 {
        return Err(Error::TruncationSize(n));
    }
    let full = stationary_truncated(walk, n)?;
    let value = full.expectation(f);
    let indicator = if richardson {
        Some((value - stationary_truncated(walk, n / 2)?.expectation(f)).abs())
    } else {
        None
    };
    Ok(OracleEstimate {
        value,
        size: n,
        indicator,
        origin_mass: full.at(0, 0),
        stats: full.stats,
    })
}

fn horizon_step(tr: &Transitions, n: usize, reward: &[f64], prev: &[f64], out: &mut [f64], exec: Execution) {
    exec.for_each_chunk(out, n, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            let s = i * n + j;
            *v = reward[s] + tr.row(s).map(|(t, p)| p * prev[t]).sum::<f64>();
        }
    });
}

fn reward_grid(f: &PerformanceFunctional, n: usize) -> Vec<f64> {
    (0..n * n).map(|k| f.evaluate(k / n, k % n)).collect()
}

/// `F^0, ..., F^T` on the truncation, with `F^t = F + P F^{t-1}`.
pub fn finite_horizon_reward(walk: &RandomWalk, f: &PerformanceFunctional, t: usize, n: usize) -> Vec<Vec<f64>> {
    let tr = transitions(walk, n);
    let reward = reward_grid(f, n);
    let mut out = vec![vec![0.0; n * n]];
    for _ in 0..t {
        let mut next = vec![0.0; n * n];
        horizon_step(&tr, n, &reward, out.last().unwrap(), &mut next, Execution::default());
        out.push(next);
    }
    out
}

/// Streams `F^1, ..., F^T` to `visit` without keeping the history.
pub fn for_each_horizon(
    walk: &RandomWalk,
    f: &PerformanceFunctional,
    t: usize,
    n: usize,
    exec: Execution,
    mut visit: impl FnMut(usize, &[f64]),
) {
    let tr = transitions(walk, n);
    let reward = reward_grid(f, n);
    let mut prev = vec![0.0; n * n];
    let mut next = vec![0.0; n * n];
    for step in 1..=t {
        horizon_step(&tr, n, &reward, &prev, &mut next, exec);
        visit(step, &next);
        std::mem::swap(&mut prev, &mut next);
    }
}

/// Largest interior or axis balance residual of `m` on `{0..n-1}^2`.
pub fn verify_invariance(walk: &RandomWalk, m: impl Fn(usize, usize) -> f64, n: usize) -> f64 {
    balance_residual_with(walk, n, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `max (|Fbar - F + sum q dF^t| - G)` over the checked states and horizons.
    pub max_excess: f64,
    pub worst: Option<(usize, usize, usize)>,
    pub violated: bool,
    pub horizon: usize,
    pub size: usize,
}

/// Checks the perturbation condition on the inner `(N-2) x (N-2)` box for `t <= T`.
#[allow(clippy::too_many_arguments)]
pub fn verify_condition(
    rtilde: &RandomWalk,
    q: &[RateDifference],
    f: &PerformanceFunctional,
    fbar: impl Fn(usize, usize) -> f64,
    g: impl Fn(usize, usize) -> f64,
    t: usize,
    n: usize,
) -> ConditionReport {
    let inner = n.saturating_sub(2);
    let deltas = |region: RegionId| -> Vec<((i32, i32), f64)> {
        q.iter()
            .filter(|d| d.region == region)
            .map(|d| (d.displacement, d.value))
            .collect()
    };
    let by_region = RegionId::ALL.map(deltas);
    let slot = |r: RegionId| RegionId::ALL.iter().position(|&x| x == r).unwrap();
    let base: Vec<f64> = (0..inner * inner)
        .map(|k| {
            let (i, j) = (k / inner, k % inner);
            fbar(i, j) - f.evaluate(i, j)
        })
        .collect();
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst = None;
    let mut check = |step: usize, ft: &[f64]| {
        for i in 0..inner {
            for j in 0..inner {
                let here = ft[i * n + j];
                let drift: f64 = by_region[slot(RegionId::of(i, j))]
                    .iter()
                    .map(|&((u, v), qv)| {
                        let (a, b) = ((i as i64 + u as i64) as usize, (j as i64 + v as i64) as usize);
                        qv * (ft[a * n + b] - here)
                    })
                    .sum();
                let excess = (base[i * inner + j] + drift).abs() - g(i, j);
                if excess > max_excess {
                    max_excess = excess;
                    worst = Some((step, i, j));
                }
            }
        }
    };
    check(0, &vec![0.0; n * n]);
    for_each_horizon(rtilde, f, t, n, Execution::default(), &mut check);
    ConditionReport {
        max_excess,
        worst,
        violated: max_excess > CONDITION_TOL,
        horizon: t,
        size: n,
    }
}

/// Largest violation of `lower <= F^t(n + d) - F^t(n) <= upper` for `t <= T`,
/// skipping the outer two layers of the box.
#[allow(clippy::too_many_arguments)]
pub fn verify_bias_bounds(
    rtilde: &RandomWalk,
    f: &PerformanceFunctional,
    d: (i32, i32),
    upper: impl Fn(usize, usize) -> f64,
    lower: impl Fn(usize, usize) -> f64,
    t: usize,
    n: usize,
) -> f64 {
    let inner = n.saturating_sub(2) as i64;
    let mut worst: f64 = f64::NEG_INFINITY;
    for_each_horizon(rtilde, f, t, n, Execution::default(), |_, ft| {
        for i in 0..inner {
            for j in 0..inner {
                let (a, b) = (i + d.0 as i64, j + d.1 as i64);
                if a < 0 || b < 0 || a >= inner || b >= inner {
                    continue;
                }
                let diff = ft[(a * n as i64 + b) as usize] - ft[(i * n as i64 + j) as usize];
                let (iu, ju) = (i as usize, j as usize);
                worst = worst.max(diff - upper(iu, ju)).max(lower(iu, ju) - diff);
            }
        }
    });
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{exact_performance, GeometricMixture};
    use crate::model::load_fixture;

    fn ex(name: &str) -> RandomWalk {
        load_fixture(name).unwrap().0
    }

    #[test]
    fn rows_are_stochastic_and_pinned_to_box() {
        let w = ex("EX4");
        let tr = transitions(&w, 6);
        for s in 0..36 {
            let total: f64 = tr.row(s).map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-14);
            assert!(tr.row(s).all(|(t, _)| t < 36));
        }
    }

    #[test]
    fn solvers_agree() {
        let w = ex("EX5");
        let direct = stationary_truncated(&w, 20).unwrap();
        assert!(direct.self_residual() < 1e-14);
        assert!((direct.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for solver in [StationarySolver::Power, StationarySolver::GaussSeidel] {
            let opts = SolverOptions {
                solver,
                ..SolverOptions::default()
            };
            let it = stationary_truncated_with(&w, 20, &opts).unwrap();
            let gap = it
                .pi
                .iter()
                .zip(&direct.pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < 1e-9, "{solver:?}: {gap}");
        }
    }

    #[test]
    fn origin_trap_concentrates_mass() {
        // Every move heads toward the origin, which only stays put.
        let w = RandomWalk::new(
            [[0.0, 0.5, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.0]],
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
        );
        assert!(w.validate().is_valid());
        let l = stationary_truncated(&w, 5).unwrap();
        assert!((l.at(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_form_matches_closed_form() {
        let w = ex("EX5");
        let p = crate::perturbation::build_product_perturbation(
            &w,
            0.5,
            1.0 / 3.0,
            crate::perturbation::SelectionPolicy::Projection,
        )
        .unwrap();
        let m = GeometricMixture::product_form(0.5, 1.0 / 3.0).unwrap();
        assert!(verify_invariance(&p.perturbed, |i, j| m.eval(i, j), 40) < 1e-14);
        assert!(verify_invariance(&w, |i, j| m.eval(i, j), 40) > 1e-4);
        let f = PerformanceFunctional::mean_horizontal();
        let exact = exact_performance(&p.target_measure, &f).unwrap();
        let est = oracle_performance(&p.perturbed, &f, 200, true).unwrap();
        assert!((est.value - exact).abs() < 1e-8, "{} vs {exact}", est.value);
    }

    #[test]
    fn horizon_recursion() {
        let w = ex("EX5");
        let f = PerformanceFunctional::mean_horizontal();
        let ft = finite_horizon_reward(&w, &f, 3, 12);
        assert!(ft[0].iter().all(|&v| v == 0.0));
        assert!((0..144).all(|k| (ft[1][k] - f.evaluate(k / 12, k % 12)).abs() < 1e-15));
        let hand = f.evaluate(5, 5)
            + (-1..=1)
                .flat_map(|s| (-1..=1).map(move |t| (s, t)))
                .map(|(s, t)| w.p(s, t) * f.evaluate((5 + s) as usize, (5 + t) as usize))
                .sum::<f64>();
        assert!((ft[2][5 * 12 + 5] - hand).abs() < 1e-14);
        assert!(ft.windows(2).all(|p| p[0].iter().zip(&p[1]).all(|(a, b)| a <= b)));
    }

    #[test]
    fn trivial_condition() {
        let w = ex("EX4");
        let f = PerformanceFunctional::mean_horizontal();
        let r = verify_condition(&w, &[], &f, |i, j| f.evaluate(i, j), |_, _| 0.0, 10, 12);
        assert!(r.max_excess <= 0.0 && !r.violated);
    }
}
