use thiserror::Error;

use crate::bounds::lp::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("state ({0}, {1}) is outside the quarter plane")]
    NegativeIndex(i64, i64),

    #[error("invalid random walk: {0}")]
    InvalidWalk(String),

    #[error("malformed model file: {0}")]
    ModelFile(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("walk has no south-bound interior mass; the boundary curve has no explicit form")]
    NoSouthMass,

    #[error("walk has no west-bound interior mass; the boundary curve has no explicit form")]
    NoWestMass,

    #[error("boundary curve denominator vanishes at {0}")]
    ZeroDenominator(f64),

    #[error("root isolation failed for polynomial {coefficients:?}")]
    RootFinding { coefficients: Vec<f64> },

    #[error("discriminant has fewer than two nonnegative real roots")]
    BranchPoints,

    #[error("point ({0}, {1}) is not on the kernel curve (residual {2:e})")]
    NotOnCurve(f64, f64, f64),

    #[error("chain revisits term ({0}, {1})")]
    Cycle(f64, f64),

    #[error("chain construction hit the step cap of {cap} terms")]
    StepCap { cap: usize, partial: Vec<(f64, f64)> },

    #[error("coefficient system has {nullity} null directions, expected exactly one")]
    Rank { nullity: usize, singular_values: Vec<f64> },

    #[error("recursion coefficient {name}_{index} vanishes")]
    Degenerate { name: &'static str, index: usize },

    #[error("chain must start with a horizontal coupling")]
    NotHorizontalFirst,

    #[error("term ({0}, {1}) lies outside the open unit square; sums diverge")]
    Divergent(f64, f64),

    #[error("invalid term set: {0}")]
    InvalidGamma(String),

    #[error("rescale constant {c} is below the required {required}")]
    RescaleTooSmall { c: f64, required: f64 },

    #[error("perturbed walk fails its own invariance check (residual {0:e})")]
    Verification(f64),

    #[error("measure takes negative values: min {0:e}")]
    NegativeMass(f64),

    #[error("kernel curve has no points inside the unit square")]
    EmptyCurve,

    #[error("reward function is negative somewhere on the state space")]
    NegativeReward,

    #[error("linear program: {0}")]
    Lp(#[from] LpError),

    #[error("truncation size {0} is too small")]
    TruncationSize(usize),

    #[error("stationary solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),
}
