//! Dense univariate polynomials with real-root isolation.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients in ascending order: `c[k]` multiplies `x^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn new(coefficients: Vec<f64>) -> Self {
        let mut p = Poly(coefficients);
        p.trim();
        p
    }

    pub fn constant(c: f64) -> Self {
        Poly::new(vec![c])
    }

    /// The monomial `x`.
    pub fn x() -> Self {
        Poly::new(vec![0.0, 1.0])
    }

    fn trim(&mut self) {
        while self.0.len() > 1 && *self.0.last().unwrap() == 0.0 {
            self.0.pop();
        }
        if self.0.is_empty() {
            self.0.push(0.0);
        }
    }

    pub fn degree(&self) -> usize {
        self.0.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly::constant(0.0);
        }
        Poly::new(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.0.iter().map(|c| c * s).collect())
    }

    /// Synthetic division by `(x - root)`; returns quotient and remainder.
    pub fn deflate(&self, root: f64) -> (Poly, f64) {
        let n = self.0.len();
        if n == 1 {
            return (Poly::constant(0.0), self.0[0]);
        }
        let mut q = vec![0.0; n - 1];
        let mut carry = 0.0;
        for k in (0..n).rev() {
            let c = self.0[k] + carry * root;
            if k == 0 {
                return (Poly::new(q), c);
            }
            q[k - 1] = c;
            carry = c;
        }
        unreachable!()
    }

    /// Largest coefficient magnitude.
    pub fn norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Upper bound on the modulus of every root (Cauchy).
    pub fn root_bound(&self) -> f64 {
        let lead = *self.0.last().unwrap();
        if lead == 0.0 {
            return 0.0;
        }
        1.0 + self.0[..self.0.len() - 1]
            .iter()
            .fold(0.0_f64, |m, c| m.max((c / lead).abs()))
    }

    /// Real roots in `[lo, hi]`, ascending.
    ///
    /// Critical points of the polynomial split the interval into monotone
    /// pieces; each sign change is refined by bisection. A critical point whose
    /// value vanishes to rounding is reported as a multiple root.
    pub fn real_roots_in(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        let p = self.effective();
        if p.degree() == 0 || lo > hi {
            return Ok(Vec::new());
        }
        if p.degree() == 1 {
            let r = -p.0[0] / p.0[1];
            return Ok(if (lo..=hi).contains(&r) { vec![r] } else { vec![] });
        }
        let crit = p.derivative().real_roots_in(lo, hi)?;
        let mut knots = Vec::with_capacity(crit.len() + 2);
        knots.push(lo);
        knots.extend(crit.iter().copied().filter(|&c| c > lo && c < hi));
        knots.push(hi);
        let scale = p.norm() * (1.0 + lo.abs().max(hi.abs())).powi(p.degree() as i32);
        let flat = 64.0 * f64::EPSILON * scale;

        let mut roots: Vec<f64> = Vec::new();
        let push = |r: f64, roots: &mut Vec<f64>| {
            if roots
                .last()
                .is_none_or(|&last| (r - last).abs() > 1e-12 * (1.0 + r.abs()))
            {
                roots.push(r);
            }
        };
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (p.eval(a), p.eval(b));
            if fa.abs() <= flat {
                push(a, &mut roots);
            }
            if fa.signum() != fb.signum() && fa.abs() > flat && fb.abs() > flat {
                let r = bisect(&p, a, b, fa).ok_or_else(|| Error::RootFinding {
                    coefficients: p.0.clone(),
                })?;
                push(r, &mut roots);
            }
        }
        if p.eval(hi).abs() <= flat {
            push(hi, &mut roots);
        }
        Ok(roots)
    }

    /// Drops leading coefficients that are negligible against the rest.
    fn effective(&self) -> Poly {
        let norm = self.norm();
        let mut c = self.0.clone();
        while c.len() > 1 && c.last().unwrap().abs() <= 1e-14 * norm {
            c.pop();
        }
        Poly::new(c)
    }
}

fn bisect(p: &Poly, mut a: f64, mut b: f64, mut fa: f64) -> Option<f64> {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return Some(m);
        }
        let fm = p.eval(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let m = 0.5 * (a + b);
    m.is_finite().then_some(m)
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.0.len().max(rhs.0.len());
        Poly::new(
            (0..n)
                .map(|k| self.0.get(k).unwrap_or(&0.0) + rhs.0.get(k).unwrap_or(&0.0))
                .collect(),
        )
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &(-rhs)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut c = vec![0.0; self.0.len() + rhs.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in rhs.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly::new(c)
    }
}
