//! Kernel polynomial `Q`, boundary polynomials `H` and `V`, their
//! discriminants, branch points and intersection sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RandomWalk;
use crate::poly::Poly;

/// Margin separating the open unit square from its boundary.
pub const UNIT_MARGIN: f64 = 1e-9;
/// Residual accepted for points claimed to lie on a curve.
pub const CURVE_TOL: f64 = 1e-9;
/// Discriminants above `-DISC_TOL` are treated as nonnegative.
pub const DISC_TOL: f64 = 1e-12;

pub type Point = (f64, f64);

/// Bivariate polynomial with `c[a][b]` multiplying `x^a y^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bivariate(pub [[f64; 3]; 3]);

impl Bivariate {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let xs = [1.0, x, x * x];
        let ys = [1.0, y, y * y];
        let mut acc = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                acc += self.0[a][b] * xs[a] * ys[b];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curve {
    Q,
    H,
    V,
}

/// Roots of a quadratic slice of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRoots {
    /// Ascending.
    pub roots: Vec<f64>,
    /// The leading coefficient vanished and the root (if any) is linear.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSystem {
    walk: RandomWalk,
    pub q: Bivariate,
    pub h: Bivariate,
    pub v: Bivariate,
    /// `Q = A(x) y^2 + B(x) y + C(x)`.
    pub a: Poly,
    pub b: Poly,
    pub c: Poly,
    /// `Q = Abar(y) x^2 + Bbar(y) x + Cbar(y)`.
    pub abar: Poly,
    pub bbar: Poly,
    pub cbar: Poly,
    /// `B^2 - 4AC`, a polynomial in `x`.
    pub delta_y: Poly,
    /// `Bbar^2 - 4 Abar Cbar`, a polynomial in `y`.
    pub delta_x: Poly,
}

/// Horizontal pair from the roots of `delta_y`, vertical pair from `delta_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoints {
    /// `(x_b, y_b)` and `(x_t, y_t)` with `y_t >= y_b`.
    pub horizontal: [Point; 2],
    /// `(x_l, y_l)` and `(x_r, y_r)` with `x_l >= x_r`.
    pub vertical: [Point; 2],
}

impl BranchPoints {
    pub fn xb(&self) -> f64 {
        self.horizontal[0].0
    }

    pub fn xt(&self) -> f64 {
        self.horizontal[1].0
    }

    /// Vertical branch point with the smaller `y` (horizontal tangent at the bottom).
    pub fn bottom(&self) -> Point {
        let [p, q] = self.vertical;
        if p.1 <= q.1 {
            p
        } else {
            q
        }
    }

    pub fn top(&self) -> Point {
        let [p, q] = self.vertical;
        if p.1 <= q.1 {
            q
        } else {
            p
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSets {
    pub h_set: Vec<Point>,
    pub v_set: Vec<Point>,
}

/// Arc of `Q` between branch points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcLabel {
    Q00,
    Q01,
    Q10,
    Q11,
}

/// Vertical band of `Q` relative to `x_b` and `x_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandLabel {
    Left,
    Center,
    Right,
}

fn stable_quadratic(a: f64, b: f64, c: f64) -> SliceRoots {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
        let roots = if b != 0.0 { vec![-c / b] } else { vec![] };
        return SliceRoots {
            roots,
            degenerate: true,
        };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < -DISC_TOL {
        return SliceRoots {
            roots: vec![],
            degenerate: false,
        };
    }
    let sq = disc.max(0.0).sqrt();
    let sgn = if b >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (b + sgn * sq);
    let mut roots = if q == 0.0 { vec![0.0, 0.0] } else { vec![q / a, c / q] };
    roots.sort_by(f64::total_cmp);
    SliceRoots {
        roots,
        degenerate: false,
    }
}

fn in_open_unit(z: f64, eps: f64) -> bool {
    z > eps && z < 1.0 - eps
}

impl CurveSystem {
    pub fn new(walk: &RandomWalk) -> Self {
        let p = |s: i32, t: i32| walk.p(s, t);
        let mut q = [[0.0; 3]; 3];
        let mut h = [[0.0; 3]; 3];
        let mut v = [[0.0; 3]; 3];
        let (mut a, mut b, mut c) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        let (mut abar, mut bbar, mut cbar) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        for s in -1..=1 {
            let i = (1 - s) as usize;
            for t in -1..=1 {
                let j = (1 - t) as usize;
                q[i][j] += p(s, t);
            }
            a[i] += p(s, -1);
            b[i] += p(s, 0);
            c[i] += p(s, 1);
            h[i][1] += walk.h(s);
            h[i][2] += p(s, -1);
        }
        for t in -1..=1 {
            let j = (1 - t) as usize;
            abar[j] += p(-1, t);
            bbar[j] += p(0, t);
            cbar[j] += p(1, t);
            v[1][j] += walk.v(t);
            v[2][j] += p(-1, t);
        }
        q[1][1] -= 1.0;
        h[1][1] -= 1.0;
        v[1][1] -= 1.0;
        b[1] -= 1.0;
        bbar[1] -= 1.0;
        let (a, b, c) = (Poly::new(a.to_vec()), Poly::new(b.to_vec()), Poly::new(c.to_vec()));
        let (abar, bbar, cbar) = (
            Poly::new(abar.to_vec()),
            Poly::new(bbar.to_vec()),
            Poly::new(cbar.to_vec()),
        );
        let four = Poly::constant(4.0);
        let delta_y = &(&b * &b) - &(&four * &(&a * &c));
        let delta_x = &(&bbar * &bbar) - &(&four * &(&abar * &cbar));
        Self {
            walk: *walk,
            q: Bivariate(q),
            h: Bivariate(h),
            v: Bivariate(v),
            a,
            b,
            c,
            abar,
            bbar,
            cbar,
            delta_y,
            delta_x,
        }
    }

    pub fn walk(&self) -> &RandomWalk {
        &self.walk
    }

    pub fn eval(&self, which: Curve, x: f64, y: f64) -> f64 {
        match which {
            Curve::Q => self.q.eval(x, y),
            Curve::H => self.h.eval(x, y),
            Curve::V => self.v.eval(x, y),
        }
    }

    /// `H / y`: vanishes exactly when a geometric term balances the horizontal axis.
    pub fn h_factor(&self, x: f64, y: f64) -> f64 {
        let w = &self.walk;
        (-1..=1).map(|s| x.powi(1 - s) * (w.h(s) + y * w.p(s, -1))).sum::<f64>() - x
    }

    /// `V / x`.
    pub fn v_factor(&self, x: f64, y: f64) -> f64 {
        let w = &self.walk;
        (-1..=1).map(|t| y.powi(1 - t) * (w.v(t) + x * w.p(-1, t))).sum::<f64>() - y
    }

    pub fn q_roots_fixed_x(&self, x: f64) -> SliceRoots {
        stable_quadratic(self.a.eval(x), self.b.eval(x), self.c.eval(x))
    }

    pub fn q_roots_fixed_y(&self, y: f64) -> SliceRoots {
        stable_quadratic(self.abar.eval(y), self.bbar.eval(y), self.cbar.eval(y))
    }

    /// Numerator of the explicit form of `H`, so that `y = N(x) / A(x)`.
    fn h_numerator(&self) -> Poly {
        let w = &self.walk;
        Poly::new(vec![-w.h(1), 1.0 - w.h(0), -w.h(-1)])
    }

    fn v_numerator(&self) -> Poly {
        let w = &self.walk;
        Poly::new(vec![-w.v(1), 1.0 - w.v(0), -w.v(-1)])
    }

    /// The point of `H` above `x` (or of `V` to the right of `y`).
    pub fn boundary_explicit(&self, which: Curve, coordinate: f64) -> Result<Option<Point>> {
        let (num, den) = match which {
            Curve::H => {
                if self.walk.down_mass() <= 0.0 {
                    return Err(Error::NoSouthMass);
                }
                (self.h_numerator().eval(coordinate), self.a.eval(coordinate))
            }
            Curve::V => {
                if self.walk.left_mass() <= 0.0 {
                    return Err(Error::NoWestMass);
                }
                (self.v_numerator().eval(coordinate), self.abar.eval(coordinate))
            }
            Curve::Q => return Err(Error::InvalidWalk("Q has no explicit boundary form".into())),
        };
        if den == 0.0 {
            return Err(Error::ZeroDenominator(coordinate));
        }
        let value = num / den;
        if value <= 0.0 {
            return Ok(None);
        }
        Ok(Some(match which {
            Curve::H => (coordinate, value),
            _ => (value, coordinate),
        }))
    }

    /// Quartic whose roots are the `x` (resp. `y`) coordinates of `Q ∩ H`
    /// (resp. `Q ∩ V`), with the known root at 1 removed.
    pub fn intersection_polynomial(&self, which: Curve) -> Result<Poly> {
        let (n, a, b, c) = match which {
            Curve::H => (self.h_numerator(), &self.a, &self.b, &self.c),
            Curve::V => (self.v_numerator(), &self.abar, &self.bbar, &self.cbar),
            Curve::Q => return Err(Error::InvalidWalk("Q does not intersect itself".into())),
        };
        let quartic = &(&(&n * &n) + &(b * &n)) + &(a * c);
        Ok(quartic.deflate(1.0).0)
    }

    fn intersect(&self, which: Curve) -> Result<Vec<Point>> {
        match which {
            Curve::H if self.walk.down_mass() <= 0.0 => return Err(Error::NoSouthMass),
            Curve::V if self.walk.left_mass() <= 0.0 => return Err(Error::NoWestMass),
            _ => {}
        }
        let poly = self.intersection_polynomial(which)?;
        if poly.is_zero() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for r in poly.real_roots_in(UNIT_MARGIN, 1.0 - UNIT_MARGIN)? {
            let Some(p) = self.boundary_explicit(which, r).ok().flatten() else {
                continue;
            };
            if !(in_open_unit(p.0, UNIT_MARGIN) && in_open_unit(p.1, UNIT_MARGIN)) {
                continue;
            }
            let rq = self.eval(Curve::Q, p.0, p.1).abs();
            let rb = self.eval(which, p.0, p.1).abs();
            if rq <= CURVE_TOL && rb <= CURVE_TOL {
                out.push(p);
            }
        }
        Ok(out)
    }

    /// `Q ∩ H` inside the open unit square, ordered by `x`.
    pub fn intersect_qh(&self) -> Result<Vec<Point>> {
        self.intersect(Curve::H)
    }

    /// `Q ∩ V` inside the open unit square, ordered by `y`.
    pub fn intersect_qv(&self) -> Result<Vec<Point>> {
        self.intersect(Curve::V)
    }

    pub fn intersection_sets(&self) -> Result<IntersectionSets> {
        Ok(IntersectionSets {
            h_set: self.intersect_qh()?,
            v_set: self.intersect_qv()?,
        })
    }

    /// Pair of consecutive nonnegative roots of `delta` enclosing the part
    /// of the curve that reaches the unit square.
    fn bracket(delta: &Poly, lead: &Poly) -> Result<(f64, f64)> {
        let hi = delta.root_bound().max(2.0);
        let roots = delta.real_roots_in(0.0, hi)?;
        if roots.len() < 2 {
            return Err(Error::BranchPoints);
        }
        let admissible = |lo: f64, up: f64| {
            let m = 0.5 * (lo + up);
            delta.eval(m) > 0.0 && lead.eval(m) != 0.0
        };
        let pairs: Vec<(f64, f64)> = roots
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|&(lo, up)| admissible(lo, up))
            .collect();
        pairs
            .iter()
            .copied()
            .find(|&(lo, up)| lo < 1.0 && 1.0 < up)
            .or_else(|| {
                pairs
                    .iter()
                    .copied()
                    .filter(|&(lo, _)| lo < 1.0)
                    .max_by(|p, q| (p.1 - p.0).total_cmp(&(q.1 - q.0)))
            })
            .ok_or(Error::BranchPoints)
    }

    pub fn branch_points(&self) -> Result<BranchPoints> {
        if self.a.is_zero() || self.abar.is_zero() {
            return Err(Error::BranchPoints);
        }
        let (x1, x2) = Self::bracket(&self.delta_y, &self.a)?;
        let yof = |x: f64| -self.b.eval(x) / (2.0 * self.a.eval(x));
        let mut horizontal = [(x1, yof(x1)), (x2, yof(x2))];
        if horizontal[0].1 > horizontal[1].1 {
            horizontal.swap(0, 1);
        }
        let (y1, y2) = Self::bracket(&self.delta_x, &self.abar)?;
        let xof = |y: f64| -self.bbar.eval(y) / (2.0 * self.abar.eval(y));
        let mut vertical = [(xof(y1), y1), (xof(y2), y2)];
        if vertical[0].0 < vertical[1].0 {
            vertical.swap(0, 1);
        }
        Ok(BranchPoints { horizontal, vertical })
    }

    /// Arc and band labels for a point on `Q`.
    pub fn classify_point(&self, bp: &BranchPoints, point: Point) -> Result<(ArcLabel, BandLabel)> {
        let (x, y) = point;
        let r = self.eval(Curve::Q, x, y);
        if r.abs() > CURVE_TOL {
            return Err(Error::NotOnCurve(x, y, r));
        }
        let lower = 2.0 * self.a.eval(x) * y + self.b.eval(x) < 0.0;
        let arc = match (lower, x <= bp.bottom().0, x <= bp.top().0) {
            (true, true, _) => ArcLabel::Q00,
            (true, false, _) => ArcLabel::Q10,
            (false, _, true) => ArcLabel::Q01,
            (false, _, false) => ArcLabel::Q11,
        };
        let (lo, hi) = (bp.xb().min(bp.xt()), bp.xb().max(bp.xt()));
        let band = if x < lo {
            BandLabel::Left
        } else if x > hi {
            BandLabel::Right
        } else {
            BandLabel::Center
        };
        Ok((arc, band))
    }

    /// Interval of `x` values over which `Q` has a point with `y` in `(eps, 1 - eps)`,
    /// intersected with `(eps, 1 - eps)`.
    pub fn admissible_x_span(&self, eps: f64) -> Result<(f64, f64)> {
        let ok = |x: f64| self.q_roots_fixed_x(x).roots.iter().any(|&y| in_open_unit(y, eps));
        let mut knots = vec![eps, 1.0 - eps];
        knots.extend(self.delta_y.real_roots_in(eps, 1.0 - eps)?);
        for y in [eps, 1.0 - eps] {
            knots.extend(
                self.q_roots_fixed_y(y)
                    .roots
                    .into_iter()
                    .filter(|&x| in_open_unit(x, eps)),
            );
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut span: Option<(f64, f64)> = None;
        for w in knots.windows(2) {
            if w[1] - w[0] <= 0.0 || !ok(0.5 * (w[0] + w[1])) {
                continue;
            }
            span = Some(match span {
                None => (w[0], w[1]),
                Some((lo, _)) => (lo, w[1]),
            });
        }
        span.ok_or(Error::EmptyCurve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_fixture;

    fn sys(name: &str) -> CurveSystem {
        CurveSystem::new(&load_fixture(name).unwrap().0)
    }

    #[test]
    fn kernel_vanishes_at_one() {
        for name in crate::model::FIXTURE_NAMES {
            assert!(sys(name).eval(Curve::Q, 1.0, 1.0).abs() < 1e-12, "{name}");
        }
    }

    #[test]
    fn ex5_hand_values() {
        let c = sys("EX5");
        assert!(c.eval(Curve::Q, 0.5, 1.0 / 3.0).abs() < 1e-14);
        assert!((c.delta_y.eval(1.0) - 0.01).abs() < 1e-14);
        assert!(c.eval(Curve::H, 1.0, 2.0 / 3.0).abs() < 1e-14);
        let ys = c.q_roots_fixed_y(1.0 / 3.0).roots;
        assert!((ys[0] - 1.0 / 3.0).abs() < 1e-12 && (ys[1] - 0.5).abs() < 1e-12);
        let xs = c.q_roots_fixed_x(1.0 / 3.0).roots;
        assert!((xs[0] - 1.0 / 3.0).abs() < 1e-12 && (xs[1] - 2.0 / 3.0).abs() < 1e-12);
        let h = c.boundary_explicit(Curve::H, 1.0).unwrap().unwrap();
        assert!((h.1 - 2.0 / 3.0).abs() < 1e-14);
        let v = c.boundary_explicit(Curve::V, 1.0).unwrap().unwrap();
        assert!((v.0 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ex1_boundary_and_sets() {
        let c = sys("EX1");
        assert!(c.eval(Curve::H, 1.0, 1.0).abs() < 1e-14);
        let h = c.boundary_explicit(Curve::H, 1.0).unwrap().unwrap();
        assert!((h.1 - 1.0).abs() < 1e-12);
        let sets = c.intersection_sets().unwrap();
        assert!(!sets.h_set.is_empty() && sets.h_set.len() <= 3);
        assert!(sets.v_set.len() <= 3);
        for &(x, y) in sets.h_set.iter() {
            assert!(c.eval(Curve::Q, x, y).abs() <= CURVE_TOL);
            assert!(c.eval(Curve::H, x, y).abs() <= CURVE_TOL);
        }
        for p in sets.v_set {
            assert!(c.eval(Curve::V, p.0, p.1).abs() <= CURVE_TOL);
        }
    }

    #[test]
    fn ex5_excludes_known_intersection() {
        let c = sys("EX5");
        let sets = c.intersection_sets().unwrap();
        assert!(sets.h_set.iter().all(|p| (p.0 - 1.0).abs() > 1e-6));
    }

    #[test]
    fn branch_points_are_double_roots() {
        for name in ["EX1", "EX3", "EX4", "EX5"] {
            let c = sys(name);
            let bp = c.branch_points().unwrap();
            for (x, y) in bp.horizontal {
                assert!(c.delta_y.eval(x).abs() <= 1e-9, "{name}");
                assert!((y + c.b.eval(x) / (2.0 * c.a.eval(x))).abs() < 1e-12);
            }
            for (_, y) in bp.vertical {
                assert!(c.delta_x.eval(y).abs() <= 1e-9, "{name}");
            }
            assert!(bp.horizontal[1].1 >= bp.horizontal[0].1);
            assert!(bp.vertical[0].0 >= bp.vertical[1].0);
        }
    }

    #[test]
    fn ex5_point_classified_center() {
        let c = sys("EX5");
        let bp = c.branch_points().unwrap();
        let (_, band) = c.classify_point(&bp, (0.5, 1.0 / 3.0)).unwrap();
        assert_eq!(band, BandLabel::Center);
        assert!(matches!(c.classify_point(&bp, (0.5, 0.9)), Err(Error::NotOnCurve(..))));
    }

    #[test]
    fn degenerate_slice_returns_linear_root() {
        let r = stable_quadratic(0.0, 2.0, -1.0);
        assert!(r.degenerate);
        assert_eq!(r.roots, vec![0.5]);
        let r = stable_quadratic(1.0, -2.0, 1.0);
        assert_eq!(r.roots.len(), 2);
        assert!((r.roots[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn admissible_span_inside_unit_interval() {
        let (lo, hi) = sys("EX4").admissible_x_span(UNIT_MARGIN).unwrap();
        assert!(0.0 < lo && lo < hi && hi < 1.0);
    }
}
