//! Simplex optima against brute-force vertex enumeration on small boxed programs.

use proptest::prelude::*;
use qwgeom_core::bounds::lp::{LinearProgram, LpError, Relation, Sense, SimplexOptions, VarKind};

const BOX: f64 = 5.0;

#[derive(Debug, Clone)]
struct Program {
    n: usize,
    free: Vec<bool>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
    cost: Vec<f64>,
    sense: Sense,
}

fn arb_program() -> impl Strategy<Value = Program> {
    (2usize..=6, 1usize..=5).prop_flat_map(|(n, m)| {
        let coef = -3i32..=3;
        let row = (
            proptest::collection::vec(coef.clone(), n),
            prop_oneof![3 => Just(Relation::Le), 2 => Just(Relation::Ge), 1 => Just(Relation::Eq)],
            -6i32..=8,
        );
        (
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(row, m),
            proptest::collection::vec(-4i32..=4, n),
            any::<bool>(),
        )
            .prop_map(move |(free, rows, cost, max)| Program {
                n,
                free,
                rows: rows
                    .into_iter()
                    .map(|(a, rel, b)| (a.into_iter().map(f64::from).collect(), rel, f64::from(b)))
                    .collect(),
                cost: cost.into_iter().map(f64::from).collect(),
                sense: if max { Sense::Maximize } else { Sense::Minimize },
            })
    })
}

impl Program {
    fn lower(&self, i: usize) -> f64 {
        if self.free[i] {
            -BOX
        } else {
            0.0
        }
    }

    fn to_lp(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(self.sense);
        for i in 0..self.n {
            let kind = if self.free[i] {
                VarKind::Free
            } else {
                VarKind::NonNegative
            };
            let v = lp.add_variable(format!("x{i}"), kind);
            lp.objective[v] = self.cost[i];
            lp.add_constraint(format!("ub{i}"), vec![(v, 1.0)], Relation::Le, BOX);
            if self.free[i] {
                lp.add_constraint(format!("lb{i}"), vec![(v, 1.0)], Relation::Ge, -BOX);
            }
        }
        for (k, (a, rel, b)) in self.rows.iter().enumerate() {
            let coeffs = a
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| (j, *c))
                .collect();
            lp.add_constraint(format!("r{k}"), coeffs, *rel, *b);
        }
        lp
    }

    fn feasible(&self, x: &[f64]) -> bool {
        let tol = 1e-9;
        (0..self.n).all(|i| x[i] >= self.lower(i) - tol && x[i] <= BOX + tol)
            && self.rows.iter().all(|(a, rel, b)| {
                let lhs: f64 = a.iter().zip(x).map(|(c, v)| c * v).sum();
                match rel {
                    Relation::Le => lhs <= b + tol,
                    Relation::Ge => lhs >= b - tol,
                    Relation::Eq => (lhs - b).abs() <= tol,
                }
            })
    }

    /// Best objective over all basic feasible points, `None` when infeasible.
    fn enumerate(&self) -> Option<f64> {
        let mut planes: Vec<(Vec<f64>, f64)> = self.rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
        for i in 0..self.n {
            let mut e = vec![0.0; self.n];
            e[i] = 1.0;
            planes.push((e.clone(), BOX));
            planes.push((e, self.lower(i)));
        }
        let mut best: Option<f64> = None;
        for subset in combinations(planes.len(), self.n) {
            let a: Vec<Vec<f64>> = subset.iter().map(|&k| planes[k].0.clone()).collect();
            let b: Vec<f64> = subset.iter().map(|&k| planes[k].1).collect();
            let Some(x) = gauss(a, b) else { continue };
            if !self.feasible(&x) {
                continue;
            }
            let z: f64 = self.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
            best = Some(match (best, self.sense) {
                (None, _) => z,
                (Some(b), Sense::Minimize) => b.min(z),
                (Some(b), Sense::Maximize) => b.max(z),
            });
        }
        best
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[allow(clippy::needless_range_loop)]
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 400, ..ProptestConfig::default() })]

    #[test]
    fn simplex_matches_vertex_enumeration(p in arb_program()) {
        let expected = p.enumerate();
        let got = p.to_lp().solve(&SimplexOptions::default());
        match (expected, got) {
            (Some(z), Ok(sol)) => {
                prop_assert!((sol.objective - z).abs() <= 1e-7 * (1.0 + z.abs()), "simplex {} vs vertices {z}", sol.objective);
                prop_assert!(p.feasible(&sol.x), "{:?}", sol.x);
            }
            (None, Err(LpError::Infeasible { .. })) => {}
            (e, g) => prop_assert!(false, "vertices {e:?} vs simplex {g:?}"),
        }
    }

    #[test]
    fn shared_phase_one_matches_separate_solves(p in arb_program()) {
        let lp = p.to_lp();
        let opts = SimplexOptions::default();
        let minus: Vec<f64> = p.cost.iter().map(|c| -c).collect();
        let both = lp.solve_objectives(&[(Sense::Minimize, p.cost.clone()), (Sense::Maximize, minus.clone())], &opts);
        let mut lo = lp.clone();
        lo.sense = Sense::Minimize;
        let mut hi = lp.clone();
        hi.sense = Sense::Maximize;
        hi.objective = minus;
        match (both, lo.solve(&opts), hi.solve(&opts)) {
            (Ok(s), Ok(a), Ok(b)) => {
                prop_assert!((s[0].objective - a.objective).abs() <= 1e-7 * (1.0 + a.objective.abs()));
                prop_assert!((s[1].objective - b.objective).abs() <= 1e-7 * (1.0 + b.objective.abs()));
                prop_assert!((a.objective + b.objective).abs() <= 1e-7 * (1.0 + a.objective.abs()));
            }
            (Err(LpError::Infeasible { .. }), Err(LpError::Infeasible { .. }), Err(LpError::Infeasible { .. })) => {}
            other => prop_assert!(false, "{other:?}"),
        }
    }
}
