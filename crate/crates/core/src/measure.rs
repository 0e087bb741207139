//! Coefficients of geometric mixtures, balance residuals and closed-form
//! performance values.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::detection::{first_coupling, GeometricTerm, Move};
use crate::error::{Error, Result};
use crate::model::{PerformanceFunctional, RandomWalk, RegionId};

/// Terms closer than this in one coordinate are treated as sharing it.
pub const GROUP_TOL: f64 = 1e-9;
/// Relative singular-value threshold for null directions.
pub const RANK_TOL: f64 = 1e-10;
/// Side of the grid used for nonnegativity checks.
pub const NONNEG_GRID: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeasureWarning {
    NegativeMass { min: f64, at: (usize, usize) },
    DominantTermNegative { rho: f64, sigma: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
}

/// `m(i, j) = sum_k alpha_k rho_k^i sigma_k^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MixtureRepr", from = "MixtureRepr")]
pub struct GeometricMixture {
    pub terms: Vec<GeometricTerm>,
    pub alphas: Vec<f64>,
    pub normalized: bool,
    pub warnings: Vec<MeasureWarning>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    components: Vec<Component>,
    normalized: bool,
    #[serde(default)]
    warnings: Vec<MeasureWarning>,
}

impl From<GeometricMixture> for MixtureRepr {
    fn from(m: GeometricMixture) -> Self {
        MixtureRepr {
            components: m.components(),
            normalized: m.normalized,
            warnings: m.warnings,
        }
    }
}

impl From<MixtureRepr> for GeometricMixture {
    fn from(r: MixtureRepr) -> Self {
        GeometricMixture {
            terms: r
                .components
                .iter()
                .map(|c| GeometricTerm::new(c.rho, c.sigma))
                .collect(),
            alphas: r.components.iter().map(|c| c.alpha).collect(),
            normalized: r.normalized,
            warnings: r.warnings,
        }
    }
}

impl GeometricMixture {
    pub fn new(terms: Vec<GeometricTerm>, alphas: Vec<f64>) -> Self {
        assert_eq!(terms.len(), alphas.len());
        Self {
            terms,
            alphas,
            normalized: false,
            warnings: Vec::new(),
        }
    }

    /// Normalized single geometric term.
    pub fn product_form(rho: f64, sigma: f64) -> Result<Self> {
        let mut m = Self::new(vec![GeometricTerm::new(rho, sigma)], vec![1.0]);
        m.normalize()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn components(&self) -> Vec<Component> {
        self.terms
            .iter()
            .zip(&self.alphas)
            .map(|(t, &alpha)| Component {
                rho: t.rho,
                sigma: t.sigma,
                alpha,
            })
            .collect()
    }

    pub fn eval(&self, i: usize, j: usize) -> f64 {
        self.terms
            .iter()
            .zip(&self.alphas)
            .map(|(t, a)| a * t.rho.powi(i as i32) * t.sigma.powi(j as i32))
            .sum()
    }

    /// Values on an `n x n` grid, row-major in `i`.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for (t, &a) in self.terms.iter().zip(&self.alphas) {
            let mut ri = a;
            for i in 0..n {
                let mut v = ri;
                for j in 0..n {
                    out[i * n + j] += v;
                    v *= t.sigma;
                }
                ri *= t.rho;
            }
        }
        out
    }

    fn check_convergent(&self) -> Result<()> {
        for t in &self.terms {
            if !(t.rho > 0.0 && t.rho < 1.0 && t.sigma > 0.0 && t.sigma < 1.0) {
                return Err(Error::Divergent(t.rho, t.sigma));
            }
        }
        Ok(())
    }

    /// `sum_k alpha_k / ((1 - rho_k)(1 - sigma_k))`.
    pub fn total_mass(&self) -> Result<f64> {
        self.check_convergent()?;
        Ok(self
            .terms
            .iter()
            .zip(&self.alphas)
            .map(|(t, a)| a / ((1.0 - t.rho) * (1.0 - t.sigma)))
            .sum())
    }

    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.total_mass()?;
        if mass == 0.0 || !mass.is_finite() {
            return Err(Error::InvalidGamma(format!("total mass {mass}")));
        }
        self.alphas.iter_mut().for_each(|a| *a /= mass);
        self.normalized = true;
        Ok(())
    }

    /// Smallest value on an `n x n` grid and where it occurs.
    pub fn min_on_grid(&self, n: usize) -> (f64, (usize, usize)) {
        let g = self.grid(n);
        let (k, v) = g
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        (v, (k / n.max(1), k % n.max(1)))
    }

    /// Recomputes the nonnegativity warnings.
    pub fn check_nonnegative(&mut self) {
        self.warnings.clear();
        let (min, at) = self.min_on_grid(NONNEG_GRID);
        if min < -1e-12 {
            self.warnings.push(MeasureWarning::NegativeMass { min, at });
        }
        let pick = |key: &dyn Fn(&GeometricTerm) -> (f64, f64)| {
            (0..self.len()).max_by(|&a, &b| {
                let (ka, kb) = (key(&self.terms[a]), key(&self.terms[b]));
                ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
            })
        };
        let by_rho = pick(&|t| (t.rho, t.sigma));
        let by_sigma = pick(&|t| (t.sigma, t.rho));
        let mut seen = Vec::new();
        for k in [by_rho, by_sigma].into_iter().flatten() {
            if self.alphas[k] <= 0.0 && !seen.contains(&k) {
                seen.push(k);
                self.warnings.push(MeasureWarning::DominantTermNegative {
                    rho: self.terms[k].rho,
                    sigma: self.terms[k].sigma,
                    alpha: self.alphas[k],
                });
            }
        }
    }

    pub fn has_negative_mass(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, MeasureWarning::NegativeMass { .. }))
    }
}

/// Maximum balance residual of an arbitrary measure over the states
/// `0 <= i, j < n - 1`, origin excluded.
pub fn balance_residual_with(walk: &RandomWalk, n: usize, m: impl Fn(usize, usize) -> f64) -> f64 {
    let kernels = RegionId::ALL.map(|r| walk.kernel(r));
    let kernel_of = |i: usize, j: usize| {
        let r = RegionId::of(i, j);
        &kernels[RegionId::ALL.iter().position(|x| *x == r).unwrap()]
    };
    let mut worst: f64 = 0.0;
    for i in 0..n.saturating_sub(1) {
        for j in 0..n.saturating_sub(1) {
            if i == 0 && j == 0 {
                continue;
            }
            let mut inflow = 0.0;
            for dx in -1..=1i32 {
                for dy in -1..=1i32 {
                    let (pi, pj) = (i as i64 - dx as i64, j as i64 - dy as i64);
                    if pi < 0 || pj < 0 {
                        continue;
                    }
                    let (pi, pj) = (pi as usize, pj as usize);
                    let p = kernel_of(pi, pj).get(dx, dy);
                    if p != 0.0 {
                        inflow += m(pi, pj) * p;
                    }
                }
            }
            worst = worst.max((m(i, j) - inflow).abs());
        }
    }
    worst
}

/// Maximum balance residual of a mixture on the `n x n` grid.
pub fn balance_residuals(walk: &RandomWalk, m: &GeometricMixture, n: usize) -> f64 {
    let g = m.grid(n);
    balance_residual_with(walk, n, |i, j| g[i * n + j])
}

/// Horizontal-axis balance factor of a term; zero exactly on `H`.
pub fn h_factor(walk: &RandomWalk, rho: f64, sigma: f64) -> f64 {
    (-1..=1)
        .map(|s| rho.powi(1 - s) * (walk.h(s) + sigma * walk.p(s, -1)))
        .sum::<f64>()
        - rho
}

/// Vertical-axis balance factor of a term; zero exactly on `V`.
pub fn v_factor(walk: &RandomWalk, rho: f64, sigma: f64) -> f64 {
    (-1..=1)
        .map(|t| sigma.powi(1 - t) * (walk.v(t) + rho * walk.p(-1, t)))
        .sum::<f64>()
        - sigma
}

fn groups(values: impl Iterator<Item = f64>) -> Vec<Vec<usize>> {
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for (k, v) in values.enumerate() {
        match out.iter_mut().find(|(r, _)| (r - v).abs() <= GROUP_TOL) {
            Some((_, g)) => g.push(k),
            None => out.push((v, vec![k])),
        }
    }
    out.into_iter().map(|(_, g)| g).collect()
}

/// Horizontal and vertical boundary balance sums for the groups containing term `index`.
pub fn boundary_balance_terms(walk: &RandomWalk, m: &GeometricMixture, index: usize) -> (f64, f64) {
    let t = m.terms[index];
    let mut bh = 0.0;
    let mut bv = 0.0;
    for (u, &a) in m.terms.iter().zip(&m.alphas) {
        if (u.rho - t.rho).abs() <= GROUP_TOL {
            bh += a * h_factor(walk, u.rho, u.sigma);
        }
        if (u.sigma - t.sigma).abs() <= GROUP_TOL {
            bv += a * v_factor(walk, u.rho, u.sigma);
        }
    }
    (bh, bv)
}

/// Homogeneous boundary system: one row per distinct `rho` and per distinct `sigma`.
pub fn coefficient_matrix(walk: &RandomWalk, gamma: &[GeometricTerm]) -> Vec<Vec<f64>> {
    let n = gamma.len();
    let mut rows = Vec::new();
    for g in groups(gamma.iter().map(|t| t.rho)) {
        let mut row = vec![0.0; n];
        for k in g {
            row[k] = h_factor(walk, gamma[k].rho, gamma[k].sigma);
        }
        rows.push(row);
    }
    for g in groups(gamma.iter().map(|t| t.sigma)) {
        let mut row = vec![0.0; n];
        for k in g {
            row[k] = v_factor(walk, gamma[k].rho, gamma[k].sigma);
        }
        rows.push(row);
    }
    rows
}

fn validate_gamma(gamma: &[GeometricTerm]) -> Result<()> {
    if gamma.is_empty() {
        return Err(Error::InvalidGamma("empty term set".into()));
    }
    for t in gamma {
        if !(t.rho > 0.0 && t.rho < 1.0 && t.sigma > 0.0 && t.sigma < 1.0) {
            return Err(Error::Divergent(t.rho, t.sigma));
        }
    }
    Ok(())
}

/// Solves the boundary system by SVD, fixes `alpha_1 = 1` and normalizes.
pub fn solve_coefficients(walk: &RandomWalk, gamma: &[GeometricTerm]) -> Result<GeometricMixture> {
    validate_gamma(gamma)?;
    let rows = coefficient_matrix(walk, gamma);
    let n = gamma.len();
    let r = rows.len().max(n);
    let mat = Mat::<f64>::from_fn(r, n, |i, j| rows.get(i).map_or(0.0, |row| row[j]));
    let svd = mat.svd();
    let s = svd.s_diagonal();
    let singular: Vec<f64> = (0..n.min(r)).map(|k| s.read(k)).collect();
    let largest = singular.iter().fold(0.0_f64, |m, v| m.max(*v));
    let rank = singular.iter().filter(|&&v| v > RANK_TOL * largest).count();
    let nullity = n - rank;
    if nullity != 1 {
        return Err(Error::Rank {
            nullity,
            singular_values: singular,
        });
    }
    let smallest = (0..singular.len())
        .min_by(|&a, &b| singular[a].total_cmp(&singular[b]))
        .unwrap();
    let v = svd.v();
    let lead = v.read(0, smallest);
    if lead.abs() < 1e-300 {
        return Err(Error::InvalidGamma("null vector vanishes on the first term".into()));
    }
    let alphas: Vec<f64> = (0..n).map(|k| v.read(k, smallest) / lead).collect();
    let mut m = GeometricMixture::new(gamma.to_vec(), alphas);
    m.normalize()?;
    m.check_nonnegative();
    Ok(m)
}

/// `W_k`: vertical-axis recursion coefficient.
pub fn w_coefficient(walk: &RandomWalk, t: &GeometricTerm) -> f64 {
    let (r, s) = (t.rho, t.sigma);
    (1.0 - 1.0 / s) * walk.v(1) + (1.0 - s) * walk.v(-1) + walk.right_mass()
        - r * (-1..=1).map(|k| s.powi(-k) * walk.p(-1, k)).sum::<f64>()
}

/// `T_k`: horizontal-axis recursion coefficient.
pub fn t_coefficient(walk: &RandomWalk, t: &GeometricTerm) -> f64 {
    let (r, s) = (t.rho, t.sigma);
    (1.0 - 1.0 / r) * walk.h(1) + (1.0 - r) * walk.h(-1) + walk.up_mass()
        - s * (-1..=1).map(|k| r.powi(-k) * walk.p(k, -1)).sum::<f64>()
}

/// Chain recursion for a horizontally-first canonical chain.
pub fn chain_coefficients(walk: &RandomWalk, gamma: &[GeometricTerm]) -> Result<GeometricMixture> {
    validate_gamma(gamma)?;
    if gamma.len() > 1 && first_coupling(gamma, GROUP_TOL) != Some(Move::Horizontal) {
        return Err(Error::NotHorizontalFirst);
    }
    let mut alphas = vec![1.0];
    for k in 1..gamma.len() {
        let index = k + 1;
        let (name, f): (&'static str, fn(&RandomWalk, &GeometricTerm) -> f64) = if index % 2 == 0 {
            ("W", w_coefficient)
        } else {
            ("T", t_coefficient)
        };
        let prev = f(walk, &gamma[k - 1]);
        let cur = f(walk, &gamma[k]);
        if cur.abs() < 1e-12 {
            return Err(Error::Degenerate { name, index });
        }
        if prev.abs() < 1e-12 {
            return Err(Error::Degenerate { name, index: index - 1 });
        }
        alphas.push(-prev / cur * alphas[k - 1]);
    }
    let mut m = GeometricMixture::new(gamma.to_vec(), alphas);
    m.normalize()?;
    m.check_nonnegative();
    Ok(m)
}

/// Per-coefficient sums of a single term `rho^i sigma^j` over each region,
/// in the order `f10, f11, f20, f22, f30, f40, f41, f42`.
pub fn term_sums(rho: f64, sigma: f64) -> [f64; 8] {
    let (a, b) = (1.0 - rho, 1.0 - sigma);
    let inner = rho * sigma / (a * b);
    [
        rho / a,
        rho / (a * a),
        sigma / b,
        sigma / (b * b),
        1.0,
        inner,
        inner / a,
        inner / b,
    ]
}

/// Coefficient form of `sum_{i,j} m(i,j) f(i,j)` for a component-wise linear `f`.
pub fn weight_vector(m: &GeometricMixture) -> Result<[f64; 8]> {
    m.check_convergent()?;
    let mut w = [0.0; 8];
    for (t, a) in m.terms.iter().zip(&m.alphas) {
        for (wk, s) in w.iter_mut().zip(term_sums(t.rho, t.sigma)) {
            *wk += a * s;
        }
    }
    Ok(w)
}

/// Closed-form `sum_{(i,j)} m(i,j) F(i,j)`.
pub fn exact_performance(m: &GeometricMixture, f: &PerformanceFunctional) -> Result<f64> {
    let w = weight_vector(m)?;
    Ok(w.iter().zip(f.to_array()).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{detect, DetectionConfig};
    use crate::model::load_fixture;

    fn gamma(name: &str) -> (RandomWalk, Vec<GeometricTerm>) {
        let walk = load_fixture(name).unwrap().0;
        let out = detect(&walk, &DetectionConfig::default()).unwrap();
        (walk, out.gamma)
    }

    #[test]
    fn ex3_coefficients_and_performance() {
        let (walk, g) = gamma("EX3");
        let m = solve_coefficients(&walk, &g).unwrap();
        let expected = [0.0088, 0.1180, -0.1557, 0.1718, -0.1414];
        for (a, e) in m.alphas.iter().zip(expected) {
            assert!((a - e).abs() < 5e-4, "{a} vs {e}");
        }
        assert!(balance_residuals(&walk, &m, 50) <= 1e-10);
        let f2 = exact_performance(&m, &PerformanceFunctional::empty_probability()).unwrap();
        assert!((f2 - m.eval(0, 0)).abs() < 1e-15);
        assert!((f2 - 0.0015).abs() < 1e-4);
        let bh = boundary_balance_terms(&walk, &m, 2);
        assert!(bh.0.abs() < 1e-9 && bh.1.abs() < 1e-9);
    }

    #[test]
    fn routes_agree() {
        for name in ["EX1", "EX3"] {
            let (walk, g) = gamma(name);
            let a = solve_coefficients(&walk, &g).unwrap();
            let b = chain_coefficients(&walk, &g).unwrap();
            for (x, y) in a.alphas.iter().zip(&b.alphas) {
                assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()), "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn perturbed_coefficient_breaks_balance() {
        let (walk, g) = gamma("EX3");
        let mut m = solve_coefficients(&walk, &g).unwrap();
        m.alphas[0] *= 1.1;
        assert!(balance_residuals(&walk, &m, 50) > 1e-6);
        let (bh, bv) = boundary_balance_terms(&walk, &m, 0);
        assert!(bh.abs() < 1e-9);
        assert!(bv.abs() > 1e-9);
    }

    #[test]
    fn uncoupled_pair_is_rank_deficient() {
        let walk = load_fixture("EX4").unwrap().0;
        let curves = crate::curves::CurveSystem::new(&walk);
        let pts: Vec<GeometricTerm> = [0.3, 0.6]
            .iter()
            .map(|&x| {
                let y = curves.q_roots_fixed_x(x).roots[0];
                GeometricTerm::on(&curves, x, y)
            })
            .collect();
        assert!(matches!(solve_coefficients(&walk, &pts), Err(Error::Rank { .. })));
    }

    #[test]
    fn single_term_closed_forms() {
        let m = GeometricMixture::product_form(0.5, 0.5).unwrap();
        assert!((m.alphas[0] - 0.25).abs() < 1e-15);
        let f1 = exact_performance(&m, &PerformanceFunctional::mean_horizontal()).unwrap();
        assert!((f1 - 1.0).abs() < 1e-12);
        let unit = exact_performance(&m, &PerformanceFunctional::unit()).unwrap();
        assert!((unit - 1.0).abs() < 1e-12);
        let walk = load_fixture("EX1").unwrap().0;
        assert!(chain_coefficients(&walk, &m.terms).unwrap().alphas[0] == 0.25);
        assert!(matches!(
            GeometricMixture::product_form(1.0, 0.5),
            Err(Error::Divergent(..))
        ));
    }

    #[test]
    fn truncated_sum_matches_closed_form() {
        let (walk, g) = gamma("EX1");
        let m = solve_coefficients(&walk, &g).unwrap();
        let f = PerformanceFunctional::mean_horizontal();
        let n = 200;
        let grid = m.grid(n);
        let direct: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| grid[i * n + j] * f.evaluate(i, j))
            .sum();
        let exact = exact_performance(&m, &f).unwrap();
        assert!((direct - exact).abs() < 1e-9);
    }

    #[test]
    fn serialization_round_trip() {
        let (walk, g) = gamma("EX1");
        let m = solve_coefficients(&walk, &g).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"rho\""));
        let back: GeometricMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(back.alphas, m.alphas);
    }
}
