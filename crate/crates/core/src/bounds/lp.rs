//! Dense revised simplex for small linear programs.
//!
//! Bounded-variable primal simplex with an explicit basis inverse, Dantzig
//! pricing that falls back to Bland's rule during degenerate stalls, and a
//! two-phase start. Free variables are handled natively.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    /// `evidence` holds row multipliers from the phase-one optimum.
    #[error("infeasible (residual infeasibility {infeasibility:e})")]
    Infeasible { infeasibility: f64, evidence: Vec<f64> },
    #[error("unbounded along variable {variable}")]
    Unbounded { variable: usize },
    #[error("iteration cap of {0} reached")]
    IterationCap(usize),
    #[error("basis matrix became singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Free,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<f64>,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    pub reinvert_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            max_iterations: 100_000,
            reinvert_every: 100,
            bland_after: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    /// One multiplier per constraint, in the sign convention of `sense`.
    pub duals: Vec<f64>,
    /// Reduced cost for every structural variable; the optimality certificate.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub phase_one_iterations: usize,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            sense,
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            kind,
        });
        self.objective.push(0.0);
        self.variables.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        label: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            label: label.into(),
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Largest violation of any constraint or sign restriction at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (v, &xj) in self.variables.iter().zip(x) {
            if v.kind == VarKind::NonNegative {
                worst = worst.max(-xj);
            }
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Plain-text listing, one row per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let fmt_row = |coeffs: &mut dyn Iterator<Item = (usize, f64)>| {
            let mut s = String::new();
            for (j, a) in coeffs {
                if a == 0.0 {
                    continue;
                }
                let sign = if a < 0.0 { '-' } else { '+' };
                let _ = write!(s, " {sign} {:.12} {}", a.abs(), self.variables[j].name);
            }
            if s.is_empty() {
                s.push_str(" 0");
            }
            s
        };
        let _ = writeln!(
            out,
            "{sense}:{}",
            fmt_row(&mut self.objective.iter().copied().enumerate())
        );
        for c in &self.constraints {
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            let _ = writeln!(
                out,
                "{}:{} {rel} {:.12}",
                c.label,
                fmt_row(&mut c.coeffs.iter().copied()),
                c.rhs
            );
        }
        for v in &self.variables {
            if v.kind == VarKind::Free {
                let _ = writeln!(out, "free {}", v.name);
            }
        }
        out
    }

    pub fn solve(&self, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
        let mut sols = self.solve_objectives(&[(self.sense, self.objective.clone())], opts)?;
        Ok(sols.pop().expect("one objective"))
    }

    /// Optimizes several objectives over the same feasible set, sharing phase one.
    pub fn solve_objectives(
        &self,
        objectives: &[(Sense, Vec<f64>)],
        opts: &SimplexOptions,
    ) -> Result<Vec<LpSolution>, LpError> {
        let sf = StandardForm::build(self);
        let mut state = State::initial(&sf)?;
        let phase_one_cost: Vec<f64> = (0..sf.ncols())
            .map(|j| if j >= sf.art_start { 1.0 } else { 0.0 })
            .collect();
        if sf.ncols() > sf.art_start {
            state.run(&sf, &phase_one_cost, opts)?;
            let infeasibility: f64 = (sf.art_start..sf.ncols()).map(|j| state.x[j]).sum();
            let scale = 1.0 + sf.b.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
            if infeasibility > opts.feasibility_tol * scale {
                let evidence = state.duals(&phase_one_cost);
                return Err(LpError::Infeasible {
                    infeasibility,
                    evidence,
                });
            }
        }
        let phase_one_iterations = state.iterations;
        let mut upper = sf.upper.clone();
        for u in upper.iter_mut().skip(sf.art_start) {
            *u = 0.0;
        }
        let sf = StandardForm { upper, ..sf };

        objectives
            .iter()
            .map(|(sense, obj)| {
                let mut st = state.clone();
                st.iterations = 0;
                let flip = if *sense == Sense::Maximize { -1.0 } else { 1.0 };
                let mut cost = vec![0.0; sf.ncols()];
                for (j, &c) in obj.iter().enumerate() {
                    cost[j] = flip * c;
                }
                st.run(&sf, &cost, opts)?;
                st.reinvert(&sf)?;
                let y = st.duals(&cost);
                let n = sf.n_struct;
                let x = st.x[..n].to_vec();
                let reduced_costs = (0..n).map(|j| flip * (cost[j] - sf.column_dot(j, &y))).collect();
                let objective = obj.iter().zip(&x).map(|(c, x)| c * x).sum();
                Ok(LpSolution {
                    objective,
                    x,
                    duals: y.iter().map(|v| flip * v).collect(),
                    reduced_costs,
                    iterations: st.iterations + phase_one_iterations,
                    phase_one_iterations,
                })
            })
            .collect()
    }
}

/// `A x + s (+ artificials) = b` with per-column bounds.
#[derive(Debug, Clone)]
struct StandardForm {
    m: usize,
    n_struct: usize,
    art_start: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    b: Vec<f64>,
    /// Basis column chosen for each row at start.
    start_basis: Vec<usize>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.constraints.len();
        let n = lp.variables.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + m];
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for v in &lp.variables {
            match v.kind {
                VarKind::Free => lower.push(f64::NEG_INFINITY),
                VarKind::NonNegative => lower.push(0.0),
            }
            upper.push(f64::INFINITY);
        }
        let mut b = Vec::with_capacity(m);
        for (i, c) in lp.constraints.iter().enumerate() {
            for &(j, a) in &c.coeffs {
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
            cols[n + i].push((i, 1.0));
            let (lo, up) = match c.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lower.push(lo);
            upper.push(up);
            b.push(c.rhs);
        }
        for col in cols.iter_mut().take(n) {
            col.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for &(i, a) in col.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += a,
                    _ => merged.push((i, a)),
                }
            }
            *col = merged;
        }
        let art_start = n + m;
        let mut start_basis = Vec::with_capacity(m);
        for i in 0..m {
            let r = b[i];
            let slack = n + i;
            if r >= lower[slack] && r <= upper[slack] {
                start_basis.push(slack);
            } else {
                let sign = if r >= 0.0 { 1.0 } else { -1.0 };
                cols.push(vec![(i, sign)]);
                lower.push(0.0);
                upper.push(f64::INFINITY);
                start_basis.push(cols.len() - 1);
            }
        }
        Self {
            m,
            n_struct: n,
            art_start,
            cols,
            lower,
            upper,
            b,
            start_basis,
        }
    }

    fn ncols(&self) -> usize {
        self.cols.len()
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        self.cols[j].iter().map(|&(i, a)| y[i] * a).sum()
    }

    /// Resting value of a nonbasic column.
    fn rest(&self, j: usize) -> f64 {
        if self.lower[j].is_finite() {
            self.lower[j]
        } else if self.upper[j].is_finite() {
            self.upper[j]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
struct State {
    m: usize,
    basis: Vec<usize>,
    /// `in_basis[j]` is the basis position of column `j`, or `usize::MAX`.
    in_basis: Vec<usize>,
    x: Vec<f64>,
    binv: Vec<f64>,
    iterations: usize,
    since_reinvert: usize,
}

impl State {
    fn initial(sf: &StandardForm) -> Result<Self, LpError> {
        let mut x: Vec<f64> = (0..sf.ncols()).map(|j| sf.rest(j)).collect();
        let mut in_basis = vec![usize::MAX; sf.ncols()];
        for (i, &j) in sf.start_basis.iter().enumerate() {
            in_basis[j] = i;
        }
        let m = sf.m;
        let mut st = Self {
            m,
            basis: sf.start_basis.clone(),
            in_basis,
            x: std::mem::take(&mut x),
            binv: vec![0.0; m * m],
            iterations: 0,
            since_reinvert: 0,
        };
        st.reinvert(sf)?;
        Ok(st)
    }

    /// Rebuilds the basis inverse and basic values from scratch.
    fn reinvert(&mut self, sf: &StandardForm) -> Result<(), LpError> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(i, a) in &sf.cols[j] {
                bmat[i * m + pos] = a;
            }
        }
        self.binv = match invert(&mut bmat.clone(), m) {
            Some(inv) => inv,
            None => {
                self.repair(sf, &bmat)?;
                let mut fixed = vec![0.0; m * m];
                for (pos, &j) in self.basis.iter().enumerate() {
                    for &(i, a) in &sf.cols[j] {
                        fixed[i * m + pos] = a;
                    }
                }
                invert(&mut fixed, m).ok_or(LpError::Singular)?
            }
        };
        let mut r = sf.b.clone();
        for j in 0..sf.ncols() {
            if self.in_basis[j] == usize::MAX && self.x[j] != 0.0 {
                for &(i, a) in &sf.cols[j] {
                    r[i] -= a * self.x[j];
                }
            }
        }
        for pos in 0..m {
            let row = &self.binv[pos * m..(pos + 1) * m];
            self.x[self.basis[pos]] = row.iter().zip(&r).map(|(a, b)| a * b).sum();
        }
        self.since_reinvert = 0;
        Ok(())
    }

    /// Replaces linearly dependent basis columns by slacks of uncovered rows.
    fn repair(&mut self, sf: &StandardForm, bmat: &[f64]) -> Result<(), LpError> {
        let m = self.m;
        let mut a = bmat.to_vec();
        let mut used = vec![false; m];
        let mut dependent = Vec::new();
        for col in 0..m {
            let best = (0..m)
                .filter(|&r| !used[r])
                .map(|r| (r, a[r * m + col].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1));
            match best {
                Some((r, v)) if v > 1e-11 => {
                    used[r] = true;
                    let p = a[r * m + col];
                    for rr in (0..m).filter(|&rr| !used[rr]) {
                        let f = a[rr * m + col] / p;
                        if f != 0.0 {
                            for k in col..m {
                                a[rr * m + k] -= f * a[r * m + k];
                            }
                        }
                    }
                }
                _ => dependent.push(col),
            }
        }
        let free_rows: Vec<usize> = (0..m).filter(|&r| !used[r]).collect();
        for (&pos, &row) in dependent.iter().zip(&free_rows) {
            let slack = sf.n_struct + row;
            if self.in_basis[slack] != usize::MAX {
                return Err(LpError::Singular);
            }
            let old = self.basis[pos];
            if sf.lower[old].is_finite() || sf.upper[old].is_finite() {
                let (lo, up) = (sf.lower[old], sf.upper[old]);
                self.x[old] = if !lo.is_finite() || (up.is_finite() && (up - self.x[old]) < (self.x[old] - lo)) {
                    up
                } else {
                    lo
                };
            }
            self.in_basis[old] = usize::MAX;
            self.in_basis[slack] = pos;
            self.basis[pos] = slack;
        }
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for pos in 0..m {
            let cb = cost[self.basis[pos]];
            if cb != 0.0 {
                let row = &self.binv[pos * m..(pos + 1) * m];
                for (yk, a) in y.iter_mut().zip(row) {
                    *yk += cb * a;
                }
            }
        }
        y
    }

    fn run(&mut self, sf: &StandardForm, cost: &[f64], opts: &SimplexOptions) -> Result<(), LpError> {
        let m = self.m;
        let mut degenerate_run = 0usize;
        let mut alpha = vec![0.0; m];
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(LpError::IterationCap(opts.max_iterations));
            }
            if self.since_reinvert >= opts.reinvert_every {
                self.reinvert(sf)?;
            }
            let bland = degenerate_run >= opts.bland_after;
            let y = self.duals(cost);

            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..sf.ncols() {
                if self.in_basis[j] != usize::MAX || sf.lower[j] == sf.upper[j] {
                    continue;
                }
                let d = cost[j] - sf.column_dot(j, &y);
                let at_lower = sf.lower[j].is_finite() && self.x[j] <= sf.lower[j];
                let at_upper = sf.upper[j].is_finite() && self.x[j] >= sf.upper[j];
                let dir = if d < -opts.optimality_tol && !at_upper {
                    1.0
                } else if d > opts.optimality_tol && !at_lower {
                    -1.0
                } else {
                    continue;
                };
                let score = d.abs();
                match entering {
                    None => entering = Some((j, dir, score)),
                    Some((_, _, best)) if !bland && score > best => entering = Some((j, dir, score)),
                    _ => {}
                }
                if bland {
                    break;
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(());
            };

            alpha.iter_mut().for_each(|a| *a = 0.0);
            for &(k, a) in &sf.cols[q] {
                for (pos, al) in alpha.iter_mut().enumerate() {
                    *al += self.binv[pos * m + k] * a;
                }
            }

            let flip = sf.upper[q] - sf.lower[q];
            let limit = |pos: usize, slack: f64| -> Option<f64> {
                let g = alpha[pos] * dir;
                let j = self.basis[pos];
                if g > opts.pivot_tol && sf.lower[j].is_finite() {
                    Some(((self.x[j] - sf.lower[j]).max(0.0) + slack) / g)
                } else if g < -opts.pivot_tol && sf.upper[j].is_finite() {
                    Some(((sf.upper[j] - self.x[j]).max(0.0) + slack) / -g)
                } else {
                    None
                }
            };
            let mut step = flip;
            let mut leave: Option<(usize, f64)> = None;
            if bland {
                for pos in 0..m {
                    let Some(lim) = limit(pos, 0.0) else { continue };
                    let better = match leave {
                        None => lim < step,
                        Some((best, _)) => {
                            lim < step - 1e-12 || (lim <= step + 1e-12 && self.basis[pos] < self.basis[best])
                        }
                    };
                    if better {
                        step = step.min(lim);
                        leave = Some((pos, alpha[pos] * dir));
                    }
                }
            } else {
                // Harris: bound the step with relaxed limits, then take the largest pivot within it.
                let relaxed = (0..m)
                    .filter_map(|pos| limit(pos, opts.feasibility_tol))
                    .fold(f64::INFINITY, f64::min);
                if relaxed < flip {
                    let mut best_abs = 0.0;
                    for pos in 0..m {
                        let Some(lim) = limit(pos, 0.0) else { continue };
                        if lim <= relaxed && alpha[pos].abs() > best_abs {
                            best_abs = alpha[pos].abs();
                            step = lim;
                            leave = Some((pos, alpha[pos] * dir));
                        }
                    }
                }
            }
            if !step.is_finite() {
                return Err(LpError::Unbounded { variable: q });
            }

            self.iterations += 1;
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.x[q] += dir * step;
            for (pos, &a) in alpha.iter().enumerate() {
                self.x[self.basis[pos]] -= a * dir * step;
            }

            let Some((r, g)) = leave else {
                self.x[q] = if dir > 0.0 { sf.upper[q] } else { sf.lower[q] };
                continue;
            };
            let out = self.basis[r];
            self.x[out] = if g > 0.0 { sf.lower[out] } else { sf.upper[out] };
            self.in_basis[out] = usize::MAX;
            self.in_basis[q] = r;
            self.basis[r] = q;

            let piv = alpha[r];
            let (head, rest) = self.binv.split_at_mut(r * m);
            let (prow, tail) = rest.split_at_mut(m);
            prow.iter_mut().for_each(|v| *v /= piv);
            for (pos, chunk) in head.chunks_mut(m).chain(tail.chunks_mut(m)).enumerate() {
                let pos = if pos < r { pos } else { pos + 1 };
                let f = alpha[pos];
                if f != 0.0 {
                    for (v, p) in chunk.iter_mut().zip(prow.iter()) {
                        *v -= f * p;
                    }
                }
            }
            self.since_reinvert += 1;
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting; `a` is consumed as scratch.
fn invert(a: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let (piv_row, piv_val) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if piv_val < 1e-14 {
            return None;
        }
        if piv_row != col {
            for k in 0..n {
                a.swap(piv_row * n + k, col * n + k);
                inv.swap(piv_row * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[r * n + k] -= f * a[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }
    Some(inv)
}
