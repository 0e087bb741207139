//! Random walks on the quarter plane and linear reward functionals.
//!
//! A walk is given by three translation-invariant kernels: the interior
//! kernel `p[s][t]`, and the partial kernels on the two axes. Rates that leave
//! an axis into the interior reuse the interior probabilities, so the
//! horizontal axis row is `h_{-1} + h_0 + h_1 + sum_s p_{s,1}` and the
//! vertical axis row is `v_{-1} + v_0 + v_1 + sum_t p_{1,t}`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance used by [`RandomWalk::validate`].
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionId {
    Interior,
    HorizontalAxis,
    VerticalAxis,
    Origin,
}

impl RegionId {
    pub const ALL: [RegionId; 4] = [
        RegionId::Interior,
        RegionId::HorizontalAxis,
        RegionId::VerticalAxis,
        RegionId::Origin,
    ];

    pub fn of(i: usize, j: usize) -> RegionId {
        match (i, j) {
            (0, 0) => RegionId::Origin,
            (_, 0) => RegionId::HorizontalAxis,
            (0, _) => RegionId::VerticalAxis,
            _ => RegionId::Interior,
        }
    }
}

/// Region of state `(i, j)`; negative coordinates are rejected.
pub fn region_of(i: i64, j: i64) -> Result<RegionId> {
    if i < 0 || j < 0 {
        return Err(Error::NegativeIndex(i, j));
    }
    Ok(RegionId::of(i as usize, j as usize))
}

/// One-step kernel indexed by displacement: `k[dx + 1][dy + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel(pub [[f64; 3]; 3]);

impl Kernel {
    pub fn get(&self, dx: i32, dy: i32) -> f64 {
        self.0[(dx + 1) as usize][(dy + 1) as usize]
    }

    /// Nonzero entries in row-major displacement order.
    pub fn entries(&self) -> impl Iterator<Item = ((i32, i32), f64)> + '_ {
        (-1..=1)
            .flat_map(|dx| (-1..=1).map(move |dy| (dx, dy)))
            .filter_map(|(dx, dy)| {
                let p = self.get(dx, dy);
                (p != 0.0).then_some(((dx, dy), p))
            })
    }

    pub fn total(&self) -> f64 {
        self.0.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomWalk {
    interior: [[f64; 3]; 3],
    horizontal: [f64; 3],
    vertical: [f64; 3],
}

impl RandomWalk {
    /// `interior[s + 1][t + 1] = p_{s,t}`, `horizontal[s + 1] = h_s`, `vertical[t + 1] = v_t`.
    pub fn new(interior: [[f64; 3]; 3], horizontal: [f64; 3], vertical: [f64; 3]) -> Self {
        Self {
            interior,
            horizontal,
            vertical,
        }
    }

    /// Builds a walk from its off-diagonal rates; `p_{0,0}`, `h_0` and `v_0` absorb the rest.
    pub fn from_rates(interior: &[((i32, i32), f64)], horizontal: (f64, f64), vertical: (f64, f64)) -> Self {
        let mut p = [[0.0; 3]; 3];
        for &((s, t), rate) in interior {
            p[(s + 1) as usize][(t + 1) as usize] = rate;
        }
        let off: f64 = interior
            .iter()
            .filter(|((s, t), _)| (*s, *t) != (0, 0))
            .map(|(_, r)| r)
            .sum();
        p[1][1] = snap(1.0 - off);
        let up_h = p[0][2] + p[1][2] + p[2][2];
        let right_v = p[2][0] + p[2][1] + p[2][2];
        let (hm1, h1) = horizontal;
        let (vm1, v1) = vertical;
        Self::new(
            p,
            [hm1, snap(1.0 - hm1 - h1 - up_h), h1],
            [vm1, snap(1.0 - vm1 - v1 - right_v), v1],
        )
    }

    pub fn p(&self, s: i32, t: i32) -> f64 {
        self.interior[(s + 1) as usize][(t + 1) as usize]
    }

    pub fn h(&self, s: i32) -> f64 {
        self.horizontal[(s + 1) as usize]
    }

    pub fn v(&self, t: i32) -> f64 {
        self.vertical[(t + 1) as usize]
    }

    pub fn interior(&self) -> &[[f64; 3]; 3] {
        &self.interior
    }

    pub fn horizontal(&self) -> &[f64; 3] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[f64; 3] {
        &self.vertical
    }

    /// `sum_s p_{s,1}`: mass leaving the horizontal axis upwards.
    pub fn up_mass(&self) -> f64 {
        (-1..=1).map(|s| self.p(s, 1)).sum()
    }

    /// `sum_t p_{1,t}`: mass leaving the vertical axis to the right.
    pub fn right_mass(&self) -> f64 {
        (-1..=1).map(|t| self.p(1, t)).sum()
    }

    /// `sum_s p_{s,-1}`.
    pub fn down_mass(&self) -> f64 {
        (-1..=1).map(|s| self.p(s, -1)).sum()
    }

    /// `sum_t p_{-1,t}`.
    pub fn left_mass(&self) -> f64 {
        (-1..=1).map(|t| self.p(-1, t)).sum()
    }

    /// Self-loop probability at the origin.
    pub fn origin_stay(&self) -> f64 {
        1.0 - self.h(1) - self.v(1) - self.p(1, 1)
    }

    pub fn kernel(&self, region: RegionId) -> Kernel {
        let mut k = [[0.0; 3]; 3];
        match region {
            RegionId::Interior => k = self.interior,
            RegionId::HorizontalAxis => {
                for s in 0..3 {
                    k[s][1] = self.horizontal[s];
                    k[s][2] = self.interior[s][2];
                }
            }
            RegionId::VerticalAxis => {
                for t in 0..3 {
                    k[1][t] = self.vertical[t];
                    k[2][t] = self.interior[2][t];
                }
            }
            RegionId::Origin => {
                k[2][1] = self.h(1);
                k[1][2] = self.v(1);
                k[2][2] = self.p(1, 1);
                k[1][1] = self.origin_stay();
            }
        }
        Kernel(k)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let interior_sum: f64 = self.interior.iter().flatten().sum();
        if (interior_sum - 1.0).abs() > PROBABILITY_TOL {
            report.push(Violation::InteriorSum(interior_sum));
        }
        let h_sum: f64 = self.horizontal.iter().sum::<f64>() + self.up_mass();
        if (h_sum - 1.0).abs() > PROBABILITY_TOL {
            report.push(Violation::HorizontalRowSum(h_sum));
        }
        let v_sum: f64 = self.vertical.iter().sum::<f64>() + self.right_mass();
        if (v_sum - 1.0).abs() > PROBABILITY_TOL {
            report.push(Violation::VerticalRowSum(v_sum));
        }
        for s in -1..=1 {
            for t in -1..=1 {
                if self.p(s, t) < 0.0 {
                    report.push(Violation::Negative(format!("p[{s},{t}]"), self.p(s, t)));
                }
            }
            if self.h(s) < 0.0 {
                report.push(Violation::Negative(format!("h[{s}]"), self.h(s)));
            }
            if self.v(s) < 0.0 {
                report.push(Violation::Negative(format!("v[{s}]"), self.v(s)));
            }
        }
        if self.origin_stay() < -PROBABILITY_TOL {
            report.push(Violation::Negative("origin self-loop".into(), self.origin_stay()));
        }
        if self.p(1, 0) + self.p(1, 1) + self.p(0, 1) <= 0.0 {
            report.warnings.push(Warning::NoNorthEastMass);
        }
        report
    }

    /// True when the walk has no mass towards north, northeast or east.
    pub fn is_unsupported_regime(&self) -> bool {
        self.p(1, 0) + self.p(1, 1) + self.p(0, 1) <= 0.0
    }

    /// Rescales the interior to sum to one and each axis row to the mass left
    /// over by the interior rates it shares.
    pub fn normalized(&self) -> RandomWalk {
        let mut out = *self;
        let total: f64 = self.interior.iter().flatten().sum();
        if total > 0.0 {
            for row in out.interior.iter_mut() {
                for p in row.iter_mut() {
                    *p /= total;
                }
            }
        }
        let h_target = 1.0 - out.up_mass();
        let h_sum: f64 = self.horizontal.iter().sum();
        if h_sum > 0.0 {
            out.horizontal.iter_mut().for_each(|h| *h *= h_target / h_sum);
        }
        let v_target = 1.0 - out.right_mass();
        let v_sum: f64 = self.vertical.iter().sum();
        if v_sum > 0.0 {
            out.vertical.iter_mut().for_each(|v| *v *= v_target / v_sum);
        }
        out
    }
}

/// Rounding residue of a complement is flushed to zero.
fn snap(x: f64) -> f64 {
    if x.abs() < 1e-15 {
        0.0
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InteriorSum(f64),
    HorizontalRowSum(f64),
    VerticalRowSum(f64),
    Negative(String, f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InteriorSum(s) => write!(f, "interior rates sum to {s} instead of 1"),
            Violation::HorizontalRowSum(s) => {
                write!(f, "horizontal-axis row sums to {s} instead of 1")
            }
            Violation::VerticalRowSum(s) => write!(f, "vertical-axis row sums to {s} instead of 1"),
            Violation::Negative(name, v) => write!(f, "{name} is negative ({v})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    NoNorthEastMass,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msg = self
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidWalk(msg))
        }
    }
}

/// Reward that is linear on each region of the state space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerformanceFunctional {
    pub f10: f64,
    pub f11: f64,
    pub f20: f64,
    pub f22: f64,
    pub f30: f64,
    pub f40: f64,
    pub f41: f64,
    pub f42: f64,
}

impl PerformanceFunctional {
    /// Mean horizontal coordinate.
    pub fn mean_horizontal() -> Self {
        Self {
            f11: 1.0,
            f41: 1.0,
            ..Self::default()
        }
    }

    /// Probability of the empty system.
    pub fn empty_probability() -> Self {
        Self {
            f30: 1.0,
            ..Self::default()
        }
    }

    /// Constant one on every state.
    pub fn unit() -> Self {
        Self {
            f10: 1.0,
            f20: 1.0,
            f30: 1.0,
            f40: 1.0,
            ..Self::default()
        }
    }

    pub fn from_array(c: [f64; 8]) -> Self {
        Self {
            f10: c[0],
            f11: c[1],
            f20: c[2],
            f22: c[3],
            f30: c[4],
            f40: c[5],
            f41: c[6],
            f42: c[7],
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.f10, self.f11, self.f20, self.f22, self.f30, self.f40, self.f41, self.f42,
        ]
    }

    pub fn evaluate(&self, i: usize, j: usize) -> f64 {
        let (x, y) = (i as f64, j as f64);
        match RegionId::of(i, j) {
            RegionId::HorizontalAxis => self.f10 + self.f11 * x,
            RegionId::VerticalAxis => self.f20 + self.f22 * y,
            RegionId::Origin => self.f30,
            RegionId::Interior => self.f40 + self.f41 * x + self.f42 * y,
        }
    }

    /// Nonnegativity on the whole quarter plane, checked at each region's
    /// corner and along its slopes.
    pub fn is_nonnegative(&self) -> bool {
        self.f30 >= 0.0
            && self.f11 >= 0.0
            && self.f10 + self.f11 >= 0.0
            && self.f22 >= 0.0
            && self.f20 + self.f22 >= 0.0
            && self.f41 >= 0.0
            && self.f42 >= 0.0
            && self.f40 + self.f41 + self.f42 >= 0.0
            && self.to_array().iter().all(|c| c.is_finite())
    }
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub interior: [[f64; 3]; 3],
    pub horizontal: [f64; 3],
    pub vertical: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<PerformanceFunctional>,
}

impl ModelFile {
    pub fn new(walk: &RandomWalk, functional: Option<PerformanceFunctional>) -> Self {
        Self {
            interior: walk.interior,
            horizontal: walk.horizontal,
            vertical: walk.vertical,
            functional,
        }
    }

    pub fn walk(&self) -> RandomWalk {
        RandomWalk::new(self.interior, self.horizontal, self.vertical)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Vertical rate closing the three-term chain of the first example exactly;
/// rounds to 0.0929.
const EX1_V1: f64 = 0.092_904_716_474_827_72;
/// Vertical rate closing the five-term chain of the third example exactly;
/// rounds to 0.113.
const EX3_V1: f64 = 0.113_081_780_144_122_28;

/// The five worked examples, plus the two as-printed variants whose rounded
/// rates break exact closure.
pub const FIXTURE_NAMES: [&str; 7] = ["EX1", "EX2", "EX3", "EX4", "EX5", "EX1-printed", "EX3-printed"];

fn two_queue_walk(v1: f64) -> RandomWalk {
    RandomWalk::from_rates(
        &[
            ((1, 0), 0.05),
            ((0, 1), 0.05),
            ((-1, 1), 0.2),
            ((-1, 0), 0.2),
            ((0, -1), 0.2),
            ((1, -1), 0.2),
        ],
        (0.1, 0.5),
        (0.06, v1),
    )
}

fn first_walk(hm1: f64, v1: f64) -> RandomWalk {
    RandomWalk::from_rates(
        &[((1, 0), 0.05), ((-1, 1), 0.15), ((0, -1), 0.15)],
        (hm1, 0.15),
        (0.15, v1),
    )
}

pub fn load_fixture(name: &str) -> Result<(RandomWalk, Option<PerformanceFunctional>)> {
    let key = name.to_ascii_uppercase();
    let out = match key.as_str() {
        "EX1" => (first_walk(0.15, EX1_V1), None),
        "EX1-PRINTED" => (first_walk(0.0, 0.0929), None),
        "EX2" => (two_queue_walk(0.1), None),
        "EX3" => (two_queue_walk(EX3_V1), Some(PerformanceFunctional::mean_horizontal())),
        "EX3-PRINTED" => (two_queue_walk(0.113), Some(PerformanceFunctional::mean_horizontal())),
        "EX4" => (
            RandomWalk::from_rates(
                &[
                    ((1, 0), 0.1),
                    ((0, 1), 0.1),
                    ((-1, 1), 0.1),
                    ((-1, 0), 0.3),
                    ((0, -1), 0.3),
                    ((1, -1), 0.1),
                ],
                (0.02, 0.1),
                (0.03, 0.1),
            ),
            Some(PerformanceFunctional::mean_horizontal()),
        ),
        "EX5" => (
            RandomWalk::from_rates(
                &[((1, 0), 0.1), ((-1, 1), 0.2), ((0, -1), 0.3)],
                (0.0, 0.1),
                (0.03, 0.0),
            ),
            Some(PerformanceFunctional::empty_probability()),
        ),
        _ => return Err(Error::UnknownFixture(name.to_string())),
    };
    Ok(out)
}
