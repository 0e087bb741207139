//! Finite constraint generation for the bounding linear programs.
//!
//! Every state `(i, j)` falls into one of 16 classes `(cx, cy)` with
//! `cx, cy ∈ {0, 1, 2, 3}`, where 3 stands for "coordinate ≥ 3" and is kept
//! symbolic. A constraint at a class is an affine form `c0 + c1 i + c2 j` in
//! the symbolic coordinates; it holds on the whole class iff it holds at the
//! class corner and its symbolic slopes are nonnegative.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::lp::{LinearProgram, LpError, Relation, Sense, SimplexOptions, VarKind};
use crate::model::{Kernel, PerformanceFunctional, RandomWalk, RegionId};
use crate::perturbation::RateDifference;

pub const SYMBOLIC: usize = 3;
const COEF_NAMES: [&str; 8] = ["f10", "f11", "f20", "f22", "f30", "f40", "f41", "f42"];
const ZERO_TOL: f64 = 1e-15;

/// Shape of the bias-bound functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPartition {
    /// Separate affine piece per coordinate category `{0, 1, ≥2}^2`.
    #[default]
    Classes,
    /// Same per-region shape as the performance functional.
    Regions,
}

/// Signed bias-bound function: `upper` or `lower` bound on the east or north difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BiasFunction {
    UpperEast,
    LowerEast,
    UpperNorth,
    LowerNorth,
}

impl BiasFunction {
    pub const ALL: [BiasFunction; 4] = [
        BiasFunction::UpperEast,
        BiasFunction::LowerEast,
        BiasFunction::UpperNorth,
        BiasFunction::LowerNorth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiasFunction::UpperEast => "UE",
            BiasFunction::LowerEast => "LE",
            BiasFunction::UpperNorth => "UN",
            BiasFunction::LowerNorth => "LN",
        }
    }

    fn of(dir: Dir, upper: bool) -> Self {
        match (dir, upper) {
            (Dir::East, true) => BiasFunction::UpperEast,
            (Dir::East, false) => BiasFunction::LowerEast,
            (Dir::North, true) => BiasFunction::UpperNorth,
            (Dir::North, false) => BiasFunction::LowerNorth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    East,
    North,
}

impl Dir {
    fn step(self) -> (i64, i64) {
        match self {
            Dir::East => (1, 0),
            Dir::North => (0, 1),
        }
    }

    fn tag(self) -> char {
        match self {
            Dir::East => 'E',
            Dir::North => 'N',
        }
    }
}

type Affine = [f64; 3];

#[derive(Debug, Clone, Copy)]
enum Coord {
    Fixed(i64),
    /// Value `base + off`, `base ≥ SYMBOLIC`.
    Symbolic(i64),
}

impl Coord {
    fn of(class: usize, off: i64) -> Self {
        if class == SYMBOLIC {
            Coord::Symbolic(off)
        } else {
            let v = class as i64 + off;
            debug_assert!(v >= 0, "state outside the quarter plane");
            Coord::Fixed(v)
        }
    }

    fn positive(self) -> bool {
        match self {
            Coord::Fixed(v) => v > 0,
            Coord::Symbolic(_) => true,
        }
    }

    fn affine(self, axis: usize) -> Affine {
        let mut a = [0.0; 3];
        match self {
            Coord::Fixed(v) => a[0] = v as f64,
            Coord::Symbolic(off) => {
                a[0] = off as f64;
                a[1 + axis] = 1.0;
            }
        }
        a
    }

    fn category(self) -> usize {
        match self {
            Coord::Fixed(v) => (v as usize).min(2),
            Coord::Symbolic(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct State {
    x: Coord,
    y: Coord,
}

impl State {
    fn new(class: (usize, usize), off: (i64, i64)) -> Self {
        Self {
            x: Coord::of(class.0, off.0),
            y: Coord::of(class.1, off.1),
        }
    }

    fn region(self) -> RegionId {
        match (self.x.positive(), self.y.positive()) {
            (true, true) => RegionId::Interior,
            (true, false) => RegionId::HorizontalAxis,
            (false, true) => RegionId::VerticalAxis,
            (false, false) => RegionId::Origin,
        }
    }

    /// `(coefficient index, multiplier)` pairs of the per-region form.
    fn cwl_terms(self) -> Vec<(usize, Affine)> {
        let one = [1.0, 0.0, 0.0];
        let (x, y) = (self.x.affine(0), self.y.affine(1));
        match self.region() {
            RegionId::HorizontalAxis => vec![(0, one), (1, x)],
            RegionId::VerticalAxis => vec![(2, one), (3, y)],
            RegionId::Origin => vec![(4, one)],
            RegionId::Interior => vec![(5, one), (6, x), (7, y)],
        }
    }
}

/// Affine combination of LP variables with affine-in-(i, j) weights.
#[derive(Debug, Clone, Default)]
struct Form {
    terms: BTreeMap<usize, Affine>,
    constant: Affine,
}

fn axpy(dst: &mut Affine, a: &Affine, s: f64) {
    for k in 0..3 {
        dst[k] += s * a[k];
    }
}

impl Form {
    fn var(&mut self, v: usize, a: &Affine, s: f64) -> &mut Self {
        axpy(self.terms.entry(v).or_insert([0.0; 3]), a, s);
        self
    }

    fn constant(&mut self, a: &Affine, s: f64) -> &mut Self {
        axpy(&mut self.constant, a, s);
        self
    }

    fn add(&mut self, other: &Form, s: f64) -> &mut Self {
        for (&v, a) in &other.terms {
            self.var(v, a, s);
        }
        axpy(&mut self.constant, &other.constant, s);
        self
    }
}

trait Vars {
    fn var(&mut self, name: &str) -> Option<usize>;
}

struct Creating<'a> {
    lp: &'a mut LinearProgram,
    index: &'a mut HashMap<String, usize>,
}

impl Vars for Creating<'_> {
    fn var(&mut self, name: &str) -> Option<usize> {
        if let Some(&v) = self.index.get(name) {
            return Some(v);
        }
        let v = self.lp.add_variable(name, VarKind::Free);
        self.index.insert(name.to_string(), v);
        Some(v)
    }
}

impl Vars for &HashMap<String, usize> {
    fn var(&mut self, name: &str) -> Option<usize> {
        self.get(name).copied()
    }
}

fn cwl_form(vars: &mut impl Vars, name: &str, st: State) -> Form {
    let mut f = Form::default();
    for (k, a) in st.cwl_terms() {
        if let Some(v) = vars.var(&format!("{name}.{}", COEF_NAMES[k])) {
            f.var(v, &a, 1.0);
        }
    }
    f
}

fn cwl_const(coefs: &[f64; 8], st: State) -> Form {
    let mut f = Form::default();
    for (k, a) in st.cwl_terms() {
        f.constant(&a, coefs[k]);
    }
    f
}

fn bias_form(vars: &mut impl Vars, partition: BiasPartition, func: BiasFunction, st: State) -> Form {
    let name = func.name();
    if partition == BiasPartition::Regions {
        return cwl_form(vars, name, st);
    }
    let (cx, cy) = (st.x.category(), st.y.category());
    let key = format!("{name}.c{cx}{cy}");
    let mut f = Form::default();
    if let Some(v) = vars.var(&format!("{key}.0")) {
        f.var(v, &[1.0, 0.0, 0.0], 1.0);
    }
    for (axis, (cat, coord, tag)) in [(cx, st.x, 'x'), (cy, st.y, 'y')].into_iter().enumerate() {
        if cat == 2 {
            if let Some(v) = vars.var(&format!("{key}.{tag}")) {
                f.var(v, &coord.affine(axis), 1.0);
            }
        }
    }
    f
}

/// Unit steps from offset `a` to offset `b`, horizontal first. Each entry is
/// `(direction, state offset, sign)` with `F(b) - F(a) = Σ sign · D_dir(state)`.
fn path_steps(a: (i64, i64), b: (i64, i64)) -> Vec<(Dir, (i64, i64), f64)> {
    let mut out = Vec::new();
    let (mut x, y0) = a;
    while x < b.0 {
        out.push((Dir::East, (x, y0), 1.0));
        x += 1;
    }
    while x > b.0 {
        out.push((Dir::East, (x - 1, y0), -1.0));
        x -= 1;
    }
    let mut y = y0;
    while y < b.1 {
        out.push((Dir::North, (x, y), 1.0));
        y += 1;
    }
    while y > b.1 {
        out.push((Dir::North, (x, y - 1), -1.0));
        y -= 1;
    }
    out
}

type Coupling = Vec<((i64, i64), (i64, i64), f64)>;

/// Minimum-cost transport from `from` (kernel at `n + d`) onto `to` (kernel at `n`),
/// with cost `2 |d + w1 - w2|_1 + [w1 != w2]` per unit.
fn coupling(from: &Kernel, to: &Kernel, d: (i64, i64)) -> Result<Coupling, LpError> {
    let k1: Vec<_> = from.entries().collect();
    let k2: Vec<_> = to.entries().collect();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let mut cells = Vec::new();
    for &((u1, v1), _) in &k1 {
        for &((u2, v2), _) in &k2 {
            let x = lp.add_variable(format!("g{}", cells.len()), VarKind::NonNegative);
            let dd = (d.0 + (u1 - u2) as i64).abs() + (d.1 + (v1 - v2) as i64).abs();
            lp.objective[x] = 2.0 * dd as f64 + if (u1, v1) == (u2, v2) { 0.0 } else { 1.0 };
            cells.push(((u1 as i64, v1 as i64), (u2 as i64, v2 as i64)));
        }
    }
    let n2 = k2.len();
    for (a, &(_, m)) in k1.iter().enumerate() {
        lp.add_constraint("src", (0..n2).map(|b| (a * n2 + b, 1.0)).collect(), Relation::Eq, m);
    }
    for (b, &(_, m)) in k2.iter().enumerate() {
        lp.add_constraint(
            "dst",
            (0..k1.len()).map(|a| (a * n2 + b, 1.0)).collect(),
            Relation::Eq,
            m,
        );
    }
    let sol = lp.solve(&SimplexOptions::default())?;
    Ok(cells
        .into_iter()
        .zip(sol.x)
        .filter(|&(_, g)| g > 1e-14)
        .map(|((w1, w2), g)| (w1, w2, g))
        .collect())
}

/// Generated constraint set together with the variable layout.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub lp: LinearProgram,
    pub partition: BiasPartition,
    index: HashMap<String, usize>,
}

struct Builder<'a> {
    lp: LinearProgram,
    index: HashMap<String, usize>,
    partition: BiasPartition,
    rtilde: &'a RandomWalk,
    couplings: HashMap<(RegionId, RegionId, (i64, i64)), Coupling>,
}

impl Builder<'_> {
    fn vars(&mut self) -> Creating<'_> {
        Creating {
            lp: &mut self.lp,
            index: &mut self.index,
        }
    }

    fn bias(&mut self, func: BiasFunction, st: State) -> Form {
        let p = self.partition;
        bias_form(&mut self.vars(), p, func, st)
    }

    fn cwl(&mut self, name: &str, st: State) -> Form {
        cwl_form(&mut self.vars(), name, st)
    }

    /// Emits rows enforcing `form ≥ 0` on the whole class.
    fn nonneg(&mut self, form: &Form, class: (usize, usize), label: &str) {
        let corner = [
            1.0,
            if class.0 == SYMBOLIC { SYMBOLIC as f64 } else { 0.0 },
            if class.1 == SYMBOLIC { SYMBOLIC as f64 } else { 0.0 },
        ];
        let mut probes = vec![("corner", corner)];
        if class.0 == SYMBOLIC {
            probes.push(("di", [0.0, 1.0, 0.0]));
        }
        if class.1 == SYMBOLIC {
            probes.push(("dj", [0.0, 0.0, 1.0]));
        }
        let dot = |a: &Affine, w: &Affine| a[0] * w[0] + a[1] * w[1] + a[2] * w[2];
        for (tag, w) in probes {
            let row: Vec<(usize, f64)> = form
                .terms
                .iter()
                .map(|(&v, a)| (v, -dot(a, &w)))
                .filter(|&(_, c)| c.abs() > ZERO_TOL)
                .collect();
            let rhs = dot(&form.constant, &w);
            if row.is_empty() && rhs >= -1e-12 {
                continue;
            }
            self.lp
                .add_constraint(format!("{label}@c{}{}.{tag}", class.0, class.1), row, Relation::Le, rhs);
        }
    }

    fn coupling(&mut self, r1: RegionId, r2: RegionId, d: (i64, i64)) -> Result<Coupling, LpError> {
        if let Some(c) = self.couplings.get(&(r1, r2, d)) {
            return Ok(c.clone());
        }
        let c = coupling(&self.rtilde.kernel(r1), &self.rtilde.kernel(r2), d)?;
        self.couplings.insert((r1, r2, d), c.clone());
        Ok(c)
    }

    fn path_bound(
        &mut self,
        from: (i64, i64),
        to: (i64, i64),
        class: (usize, usize),
        weight: f64,
        up: &mut Form,
        lo: &mut Form,
    ) {
        for (dir, st, sign) in path_steps(from, to) {
            let s = State::new(class, st);
            let (u, l) = (
                self.bias(BiasFunction::of(dir, true), s),
                self.bias(BiasFunction::of(dir, false), s),
            );
            if sign > 0.0 {
                up.add(&u, weight);
                lo.add(&l, weight);
            } else {
                up.add(&l, -weight);
                lo.add(&u, -weight);
            }
        }
    }
}

/// Builds every constraint family for reward `f` on `rtilde` perturbed by `q`.
pub fn build_polytope(
    rtilde: &RandomWalk,
    q: &[RateDifference],
    f: &PerformanceFunctional,
    partition: BiasPartition,
) -> Result<Polytope, LpError> {
    let mut b = Builder {
        lp: LinearProgram::new(Sense::Minimize),
        index: HashMap::new(),
        partition,
        rtilde,
        couplings: HashMap::new(),
    };
    for k in 0..8 {
        b.vars().var(&format!("Fbar.{}", COEF_NAMES[k]));
    }
    for k in 0..8 {
        b.vars().var(&format!("G.{}", COEF_NAMES[k]));
    }
    let fc = f.to_array();
    for cx in 0..=SYMBOLIC {
        for cy in 0..=SYMBOLIC {
            let class = (cx, cy);
            let here = State::new(class, (0, 0));
            // C1: bias-bound induction along east and north.
            for dir in [Dir::East, Dir::North] {
                let d = dir.step();
                let there = State::new(class, d);
                let cp = b.coupling(there.region(), here.region(), d)?;
                let mut df = cwl_const(&fc, there);
                df.add(&cwl_const(&fc, here), -1.0);
                let (mut up, mut lo) = (Form::default(), Form::default());
                for (w1, w2, g) in cp {
                    b.path_bound(w2, (d.0 + w1.0, d.1 + w1.1), class, g, &mut up, &mut lo);
                }
                let u = b.bias(BiasFunction::of(dir, true), here);
                let l = b.bias(BiasFunction::of(dir, false), here);
                let tag = dir.tag();
                let mut upper = u.clone();
                upper.add(&df, -1.0).add(&up, -1.0);
                b.nonneg(&upper, class, &format!("C1.U{tag}.induction"));
                let mut lower = df.clone();
                lower.add(&lo, 1.0).add(&l, -1.0);
                b.nonneg(&lower, class, &format!("C1.L{tag}.induction"));
                b.nonneg(&u, class, &format!("C3.U{tag}.sign"));
                let mut neg = Form::default();
                neg.add(&l, -1.0);
                b.nonneg(&neg, class, &format!("C3.L{tag}.sign"));
            }
            // C2: perturbation condition, both signs.
            let region = here.region();
            let g = b.cwl("G", here);
            let fbar = b.cwl("Fbar", here);
            let mut diff = fbar.clone();
            diff.add(&cwl_const(&fc, here), -1.0);
            for (sgn, tag) in [(1.0, '+'), (-1.0, '-')] {
                let mut e = g.clone();
                e.add(&diff, -sgn);
                for rd in q.iter().filter(|r| r.region == region && r.displacement != (0, 0)) {
                    if rd.value.abs() < ZERO_TOL {
                        continue;
                    }
                    let w = (rd.displacement.0 as i64, rd.displacement.1 as i64);
                    for (dir, st, sign) in path_steps((0, 0), w) {
                        let c = sgn * rd.value * sign;
                        let bound = b.bias(BiasFunction::of(dir, c > 0.0), State::new(class, st));
                        e.add(&bound, -c);
                    }
                }
                b.nonneg(&e, class, &format!("C2.{tag}"));
            }
            b.nonneg(&g, class, "C3.G.sign");
            b.nonneg(&fbar, class, "C3.Fbar.sign");
        }
    }
    Ok(Polytope {
        lp: b.lp,
        partition,
        index: b.index,
    })
}

impl Polytope {
    pub fn variable(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Indices of the `Fbar` coefficients, in functional order.
    pub fn fbar_vars(&self) -> [usize; 8] {
        COEF_NAMES.map(|c| self.index[&format!("Fbar.{c}")])
    }

    pub fn g_vars(&self) -> [usize; 8] {
        COEF_NAMES.map(|c| self.index[&format!("G.{c}")])
    }

    pub fn function(&self, x: &[f64], which: &str) -> PerformanceFunctional {
        PerformanceFunctional::from_array(COEF_NAMES.map(|c| x[self.index[&format!("{which}.{c}")]]))
    }

    /// Affine piece `(c0, ci, cj)` of a bias-bound function on one class.
    pub fn bias_piece(&self, x: &[f64], func: BiasFunction, class: (usize, usize)) -> [f64; 3] {
        let form = bias_form(&mut &self.index, self.partition, func, State::new(class, (0, 0)));
        let mut out = [0.0; 3];
        for (&v, a) in &form.terms {
            axpy(&mut out, a, x[v]);
        }
        out
    }

    /// Bias coefficients by variable name.
    pub fn bias_coefficients(&self, x: &[f64]) -> BTreeMap<String, f64> {
        self.index
            .iter()
            .filter(|(k, _)| !k.starts_with("Fbar.") && !k.starts_with("G."))
            .map(|(k, &v)| (k.clone(), x[v]))
            .collect()
    }

    /// Number of generated rows per constraint family label prefix.
    pub fn family_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for c in &self.lp.constraints {
            let fam = c.label.split('@').next().unwrap_or("").to_string();
            *out.entry(fam).or_insert(0) += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_decomposition_telescopes() {
        for a in [(0, 0), (-1, 1), (1, -1)] {
            for b in [(2, 1), (0, -1), (-1, 0), (1, 1)] {
                let steps = path_steps(a, b);
                let (mut dx, mut dy) = (0, 0);
                for (dir, _, s) in &steps {
                    let (u, v) = dir.step();
                    dx += (*s as i64) * u;
                    dy += (*s as i64) * v;
                }
                assert_eq!((a.0 + dx, a.1 + dy), b);
                assert_eq!(steps.len() as i64, (b.0 - a.0).abs() + (b.1 - a.1).abs());
            }
        }
        assert_eq!(path_steps((1, 0), (0, 0))[0].1, (0, 0));
    }

    #[test]
    fn identical_kernels_couple_in_place() {
        let k = Kernel([[0.1, 0.2, 0.0], [0.3, 0.0, 0.1], [0.0, 0.1, 0.2]]);
        let c = coupling(&k, &k, (1, 0)).unwrap();
        assert!(c.iter().all(|(w1, w2, _)| w1 == w2));
        assert!((c.iter().map(|x| x.2).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_categories() {
        let s = State::new((SYMBOLIC, 0), (-1, 1));
        assert_eq!(s.region(), RegionId::Interior);
        assert_eq!((s.x.category(), s.y.category()), (2, 1));
        assert_eq!(State::new((1, 0), (-1, 0)).region(), RegionId::Origin);
        assert_eq!(State::new((0, 2), (0, 1)).y.category(), 2);
    }

    #[test]
    fn row_count_is_grid_independent() {
        let w = crate::model::load_fixture("EX4").unwrap().0;
        let f = PerformanceFunctional::mean_horizontal();
        let p = build_polytope(&w, &[], &f, BiasPartition::Classes).unwrap();
        assert_eq!(p.lp.num_variables(), 16 + 4 * 15);
        let rows = p.lp.num_constraints();
        assert!(rows > 100 && rows < 1000, "{rows}");
        let r = build_polytope(&w, &[], &f, BiasPartition::Regions).unwrap();
        assert_eq!(r.lp.num_variables(), 16 + 4 * 8);
    }
}
