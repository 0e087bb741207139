use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use qwgeom_core::bounds::{
    best_mixture, bound_performance, build_polytope, sweep_bounds, BiasPartition, BoundOptions, BoundResult,
};
use qwgeom_core::curves::CurveSystem;
use qwgeom_core::detection::{detect, DetectionConfig, GeometricTerm, OutcomeKind};
use qwgeom_core::measure::{chain_coefficients, exact_performance, solve_coefficients, GeometricMixture};
use qwgeom_core::model::ModelFile;
use qwgeom_core::oracle::{oracle_performance, stationary_truncated};
use qwgeom_core::perturbation::{
    build_mixture_perturbation, build_product_perturbation, candidate_terms, mixture_candidates, PerturbationResult,
    SelectionPolicy,
};
use qwgeom_core::{Error, Execution, PerformanceFunctional, RandomWalk};

use crate::report::{opt_sig, sig, Format, Outcome, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_REPRESENTABLE: i32 = 3;
pub const EXIT_UNSUPPORTED: i32 = 4;

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model file (JSON).
    pub model: PathBuf,
    /// Curve-membership tolerance for detection.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Step cap for coupled-chain construction.
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: usize,
    /// Rescale the input rates so every region sums to one.
    #[arg(long)]
    pub normalize: bool,
    /// Treat warnings as errors.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the bounding program in text form to this path.
    #[arg(long)]
    pub dump_lp: Option<PathBuf>,
    /// Write `i,j,value` rows of the measure to this path.
    #[arg(long)]
    pub dump_grid: Option<PathBuf>,
    /// Include curve coefficients, branch points and intersection sets.
    #[arg(long)]
    pub debug_curves: bool,
    /// Run sequentially instead of on the thread pool.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Perf {
    /// Mean horizontal coordinate.
    F1,
    /// Probability of the empty state.
    F2,
}

impl Perf {
    fn functional(self) -> PerformanceFunctional {
        match self {
            Perf::F1 => PerformanceFunctional::mean_horizontal(),
            Perf::F2 => PerformanceFunctional::empty_probability(),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Perf::F1 => "F1",
            Perf::F2 => "F2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Perturb {
    Product,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Projection,
    Minimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    Classes,
    Regions,
}

#[derive(Debug, Clone, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub perf: Option<Perf>,
    /// Grid size for `--dump-grid`.
    #[arg(long, default_value_t = 50)]
    pub size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub perf: Option<Perf>,
    #[arg(long, value_enum, default_value_t = Perturb::Product)]
    pub perturb: Perturb,
    /// Number of terms in a mixture target (odd, at least 3).
    #[arg(long, default_value_t = 3)]
    pub gamma_size: usize,
    /// `auto`, a candidate index, or a JSON file of `[rho, sigma]` pairs.
    #[arg(long, default_value = "auto")]
    pub candidate: String,
    /// Run the product-form sweep over this many sampled candidates.
    #[arg(long)]
    pub sweep: Option<usize>,
    /// Sampled points for automatic candidate selection.
    #[arg(long, default_value_t = 24)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Policy::Projection)]
    pub policy: Policy,
    #[arg(long, value_enum, default_value_t = Partition::Classes)]
    pub partition: Partition,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub perf: Option<Perf>,
    /// Truncation size `N` of the `N x N` box.
    #[arg(long, default_value_t = 200)]
    pub size: usize,
}

struct Loaded {
    walk: RandomWalk,
    functional: Option<PerformanceFunctional>,
    report: RunReport,
}

fn load(command: &str, c: &Common) -> Result<Loaded, Error> {
    let bytes = std::fs::read(&c.model)?;
    let file = ModelFile::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::InvalidWalk(e.to_string()))?)?;
    let mut walk = file.walk();
    if c.normalize {
        walk = walk.normalized();
    }
    let mut report = RunReport::new(command, &c.model.display().to_string(), &bytes);
    let validation = walk.validate();
    for w in &validation.warnings {
        report.warnings.push(format!("{w:?}"));
    }
    validation.into_result()?;
    Ok(Loaded {
        walk,
        functional: file.functional,
        report,
    })
}

fn exec(c: &Common) -> Execution {
    if c.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn detection_config(c: &Common) -> DetectionConfig {
    DetectionConfig {
        membership_tol: c.tol,
        step_cap: c.max_steps,
        ..DetectionConfig::default()
    }
}

fn functionals(perf: Option<Perf>, file: Option<PerformanceFunctional>) -> Vec<(String, PerformanceFunctional)> {
    match (perf, file) {
        (Some(p), _) => vec![(p.label().to_string(), p.functional())],
        (None, Some(f)) => vec![("model".to_string(), f)],
        (None, None) => [Perf::F1, Perf::F2]
            .map(|p| (p.label().to_string(), p.functional()))
            .to_vec(),
    }
}

fn strict_check(c: &Common, report: &RunReport) -> Result<(), Error> {
    if c.strict && !report.warnings.is_empty() {
        return Err(Error::InvalidWalk(format!(
            "--strict: {} warning(s): {}",
            report.warnings.len(),
            report.warnings.join("; ")
        )));
    }
    Ok(())
}

fn write_grid(path: &Path, n: usize, value: impl Fn(usize, usize) -> f64) -> Result<(), Error> {
    let mut s = String::from("i,j,value\n");
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(s, "{i},{j},{:e}", value(i, j));
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn curve_debug(walk: &RandomWalk) -> Value {
    let curves = CurveSystem::new(walk);
    json!({
        "curves": curves,
        "branch_points": curves.branch_points().ok(),
        "sets": curves.intersection_sets().ok(),
    })
}

fn terms_csv(terms: &[GeometricTerm], alphas: Option<&[f64]>) -> String {
    let mut s = String::from(if alphas.is_some() {
        "index,rho,sigma,alpha\n"
    } else {
        "index,rho,sigma\n"
    });
    for (k, t) in terms.iter().enumerate() {
        let _ = write!(s, "{k},{},{}", sig(t.rho), sig(t.sigma));
        if let Some(a) = alphas {
            let _ = write!(s, ",{}", sig(a[k]));
        }
        s.push('\n');
    }
    s
}

pub fn cmd_detect(c: &Common) -> Result<Outcome, Error> {
    let Loaded { walk, mut report, .. } = load("detect", c)?;
    let out = report.time("detect", || detect(&walk, &detection_config(c)))?;
    let code = match out.kind {
        OutcomeKind::Representable => EXIT_OK,
        OutcomeKind::NotRepresentable => EXIT_NOT_REPRESENTABLE,
        OutcomeKind::Unsupported => EXIT_UNSUPPORTED,
    };
    if let Some(note) = &out.diagnostics.note {
        report.warnings.push(note.clone());
    }
    let mut payload = serde_json::to_value(&out).expect("outcome serializes");
    if c.debug_curves {
        payload["debug"] = curve_debug(&walk);
    }
    report.payload = payload;
    let mut table = String::new();
    let kind = match out.kind {
        OutcomeKind::Representable => "yes",
        OutcomeKind::NotRepresentable => "no",
        OutcomeKind::Unsupported => "unsupported regime",
    };
    let _ = writeln!(table, "representable: {kind}");
    if out.representable {
        let _ = writeln!(table, "terms: {}", out.gamma.len());
        for (k, t) in out.gamma.iter().enumerate() {
            let _ = writeln!(table, "  {k}  rho={}  sigma={}", sig(t.rho), sig(t.sigma));
        }
        if let Some(p) = out.parity {
            let _ = writeln!(table, "parity: {p:?}");
        }
        if let Some((a, b)) = out.endpoints {
            let _ = writeln!(table, "endpoints: {:?}[{}] -> {:?}[{}]", a.set, a.index, b.set, b.index);
        }
    }
    let _ = writeln!(table, "termination bound: {:?}", out.diagnostics.termination);
    strict_check(c, &report)?;
    Ok(Outcome {
        csv: terms_csv(&out.gamma, None),
        report,
        table,
        code,
    })
}

pub fn cmd_measure(a: &MeasureArgs) -> Result<Outcome, Error> {
    let c = &a.common;
    let Loaded {
        walk,
        functional,
        mut report,
    } = load("measure", c)?;
    let out = report.time("detect", || detect(&walk, &detection_config(c)))?;
    match out.kind {
        OutcomeKind::Representable => {}
        kind => {
            report.warnings.push(
                "invariant measure is not a finite sum of geometric terms; use `qwgeom bound` for certified bounds"
                    .into(),
            );
            report.payload = json!({ "detection": out });
            let code = if kind == OutcomeKind::Unsupported {
                EXIT_UNSUPPORTED
            } else {
                EXIT_NOT_REPRESENTABLE
            };
            return Ok(Outcome {
                table: "representable: no\n".into(),
                csv: String::new(),
                report,
                code,
            });
        }
    }
    let mut m = report.time("coefficients", || solve_coefficients(&walk, &out.gamma))?;
    m.check_nonnegative();
    for w in &m.warnings {
        report.warnings.push(format!("{w:?}"));
    }
    let chain = chain_coefficients(&walk, &out.gamma).ok();
    let chain_gap = chain.as_ref().map(|ch| {
        ch.alphas
            .iter()
            .zip(&m.alphas)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    });
    let perfs: Vec<(String, f64)> = functionals(a.perf, functional)
        .into_iter()
        .map(|(name, f)| exact_performance(&m, &f).map(|v| (name, v)))
        .collect::<Result<_, _>>()?;
    if let Some(path) = &c.dump_grid {
        write_grid(path, a.size, |i, j| m.eval(i, j))?;
    }
    let mut payload = json!({
        "gamma": out.gamma,
        "measure": m,
        "chain_recursion_max_difference": chain_gap,
        "performance": perfs.iter().map(|(k, v)| json!({"name": k, "value": v})).collect::<Vec<_>>(),
        "mass_at_origin": m.eval(0, 0),
    });
    if c.debug_curves {
        payload["debug"] = curve_debug(&walk);
    }
    report.payload = payload;
    let mut table = String::new();
    let _ = writeln!(table, "{:>3}  {:>12}  {:>12}  {:>12}", "k", "rho", "sigma", "alpha");
    for (k, (t, al)) in m.terms.iter().zip(&m.alphas).enumerate() {
        let _ = writeln!(
            table,
            "{k:>3}  {:>12}  {:>12}  {:>12}",
            sig(t.rho),
            sig(t.sigma),
            sig(*al)
        );
    }
    let _ = writeln!(table, "m(0,0) = {}", sig(m.eval(0, 0)));
    for (k, v) in &perfs {
        let _ = writeln!(table, "{k} = {}", sig(*v));
    }
    let mut csv = terms_csv(&m.terms, Some(&m.alphas));
    for (k, v) in &perfs {
        let _ = writeln!(csv, "# {k},{}", sig(*v));
    }
    strict_check(c, &report)?;
    Ok(Outcome {
        report,
        table,
        csv,
        code: EXIT_OK,
    })
}

enum Candidate {
    Auto,
    Index(usize),
    Terms(Vec<GeometricTerm>),
}

fn parse_candidate(s: &str) -> Result<Candidate, Error> {
    if s == "auto" {
        return Ok(Candidate::Auto);
    }
    if let Ok(k) = s.parse::<usize>() {
        return Ok(Candidate::Index(k));
    }
    let text = std::fs::read_to_string(s)?;
    let pairs: Vec<(f64, f64)> = serde_json::from_str(&text)?;
    Ok(Candidate::Terms(
        pairs.into_iter().map(|(r, s)| GeometricTerm::new(r, s)).collect(),
    ))
}

fn perturbation_json(p: &PerturbationResult) -> Value {
    json!({
        "c": p.c,
        "rates": p.rates,
        "perturbed": p.perturbed,
        "q": p.q,
        "target_measure": p.target_measure,
        "anchors": p.anchors,
        "residual": p.residual,
    })
}

fn bound_json(b: &BoundResult) -> Value {
    json!({
        "f_low": b.f_low,
        "f_up": b.f_up,
        "upper": { "fbar": b.upper.fbar, "g": b.upper.g, "iterations": b.upper.iterations },
        "lower": { "fbar": b.lower.fbar, "g": b.lower.g, "iterations": b.lower.iterations },
        "diagnostics": b.diagnostics,
    })
}

pub fn cmd_bound(a: &BoundArgs) -> Result<Outcome, Error> {
    let c = &a.common;
    let Loaded {
        walk,
        functional,
        mut report,
    } = load("bound", c)?;
    let (perf_name, f) = match (a.perf, functional) {
        (Some(p), _) => (p.label().to_string(), p.functional()),
        (None, Some(f)) => ("model".to_string(), f),
        (None, None) => ("F1".to_string(), Perf::F1.functional()),
    };
    let policy = match a.policy {
        Policy::Projection => SelectionPolicy::Projection,
        Policy::Minimal => SelectionPolicy::Minimal,
    };
    let opts = BoundOptions {
        partition: match a.partition {
            Partition::Classes => BiasPartition::Classes,
            Partition::Regions => BiasPartition::Regions,
        },
        ..BoundOptions::default()
    };
    if let Ok(d) = detect(&walk, &detection_config(c)) {
        if d.representable {
            report
                .warnings
                .push("measure is exactly representable; `qwgeom measure` gives the exact value".into());
        }
    }
    let ex = exec(c);

    if let Some(k) = a.sweep.filter(|_| a.perturb == Perturb::Product) {
        let cands = candidate_terms(&walk, k)?;
        let table_rows = report.time("sweep", || sweep_bounds(&walk, &f, &cands, policy, &opts, ex));
        for r in &table_rows.rows {
            if let Some(e) = &r.error {
                report.warnings.push(format!("candidate {}: {e}", r.candidate_index));
            }
        }
        let mut csv = String::from("candidate_index,rho,sigma,C,F_low,F_up\n");
        let mut table = format!("product-form sweep, {perf_name}, {k} candidates\n");
        let _ = writeln!(
            table,
            "{:>3}  {:>10}  {:>10}  {:>8}  {:>12}  {:>12}",
            "k", "rho", "sigma", "C", "F_low", "F_up"
        );
        for r in &table_rows.rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.candidate_index,
                sig(r.rho),
                sig(r.sigma),
                opt_sig(r.c),
                opt_sig(r.f_low),
                opt_sig(r.f_up)
            );
            let _ = writeln!(
                table,
                "{:>3}  {:>10}  {:>10}  {:>8}  {:>12}  {:>12}",
                r.candidate_index,
                sig(r.rho),
                sig(r.sigma),
                opt_sig(r.c),
                opt_sig(r.f_low),
                opt_sig(r.f_up)
            );
        }
        let _ = writeln!(table, "min F_up = {}", opt_sig(table_rows.min_up));
        let _ = writeln!(table, "max F_low = {}", opt_sig(table_rows.max_low));
        report.payload = json!({ "performance": perf_name, "sweep": table_rows });
        strict_check(c, &report)?;
        return Ok(Outcome {
            report,
            table,
            csv,
            code: EXIT_OK,
        });
    }

    let candidate = parse_candidate(&a.candidate)?;
    let samples = a.sweep.unwrap_or(a.samples);
    let (p, b) = match (a.perturb, candidate) {
        (Perturb::Product, Candidate::Auto) => {
            let cands = candidate_terms(&walk, samples)?;
            let s = report.time("sweep", || sweep_bounds(&walk, &f, &cands, policy, &opts, ex));
            let best = s
                .rows
                .iter()
                .filter(|r| r.f_up.is_some())
                .min_by(|x, y| x.f_up.unwrap().total_cmp(&y.f_up.unwrap()))
                .ok_or(Error::InvalidGamma("no candidate produced a bound".into()))?;
            let p = build_product_perturbation(&walk, best.rho, best.sigma, policy)?;
            let b = bound_performance(&walk, &f, &p, &opts)?;
            (p, b)
        }
        (Perturb::Product, other) => {
            let t = match other {
                Candidate::Index(k) => *candidate_terms(&walk, samples)?
                    .get(k)
                    .ok_or_else(|| Error::InvalidGamma(format!("candidate index {k} out of range")))?,
                Candidate::Terms(ts) if ts.len() == 1 => ts[0],
                _ => return Err(Error::InvalidGamma("product form needs exactly one term".into())),
            };
            let p = build_product_perturbation(&walk, t.rho, t.sigma, policy)?;
            let b = report.time("lp", || bound_performance(&walk, &f, &p, &opts))?;
            (p, b)
        }
        (Perturb::Mixture, Candidate::Auto) => {
            let sets = mixture_candidates(&walk, samples, a.gamma_size)?;
            let search = report.time("search", || best_mixture(&walk, &f, &sets, policy, &opts, ex));
            report.warnings.extend(
                search
                    .skipped
                    .iter()
                    .take(5)
                    .map(|(k, e)| format!("set {k} skipped: {e}")),
            );
            let best = search.best.ok_or(Error::InvalidGamma(
                "no admissible mixture target among the candidates".into(),
            ))?;
            (best.perturbation, best.bound)
        }
        (Perturb::Mixture, other) => {
            let gamma = match other {
                Candidate::Index(k) => mixture_candidates(&walk, samples, a.gamma_size)?
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::InvalidGamma(format!("candidate index {k} out of range")))?,
                Candidate::Terms(ts) => ts,
                Candidate::Auto => unreachable!(),
            };
            let p = build_mixture_perturbation(&walk, &gamma, policy, c.strict)?;
            let b = report.time("lp", || bound_performance(&walk, &f, &p, &opts))?;
            (p, b)
        }
    };
    for w in &p.target_measure.warnings {
        report.warnings.push(format!("{w:?}"));
    }
    if let Some(path) = &c.dump_lp {
        let poly = build_polytope(&p.input_rescaled, &p.q, &f, opts.partition).map_err(Error::Lp)?;
        std::fs::write(path, poly.lp.dump())?;
    }
    if let Some(path) = &c.dump_grid {
        let m: &GeometricMixture = &p.target_measure;
        write_grid(path, 50, |i, j| m.eval(i, j))?;
    }
    let mut table = format!("{perf_name} in [{}, {}]\n", sig(b.f_low), sig(b.f_up));
    let _ = writeln!(table, "gap = {}", sig(b.gap()));
    let _ = writeln!(table, "C = {}", sig(p.c));
    let _ = writeln!(
        table,
        "perturbed rates: h1={} h-1={} v1={} v-1={}",
        sig(p.perturbed.h(1)),
        sig(p.perturbed.h(-1)),
        sig(p.perturbed.v(1)),
        sig(p.perturbed.v(-1))
    );
    for (k, (t, al)) in p.target_measure.terms.iter().zip(&p.target_measure.alphas).enumerate() {
        let _ = writeln!(
            table,
            "  term {k}: rho={} sigma={} alpha={}",
            sig(t.rho),
            sig(t.sigma),
            sig(*al)
        );
    }
    let _ = writeln!(
        table,
        "LP: {} rows, {} variables, {} + {} iterations",
        b.diagnostics.rows, b.diagnostics.variables, b.upper.iterations, b.lower.iterations
    );
    let csv = format!(
        "performance,C,F_low,F_up\n{perf_name},{},{},{}\n",
        sig(p.c),
        sig(b.f_low),
        sig(b.f_up)
    );
    report.payload = json!({
        "performance": perf_name,
        "functional": f,
        "perturbation": perturbation_json(&p),
        "bound": bound_json(&b),
    });
    strict_check(c, &report)?;
    Ok(Outcome {
        report,
        table,
        csv,
        code: EXIT_OK,
    })
}

pub fn cmd_oracle(a: &OracleArgs) -> Result<Outcome, Error> {
    let c = &a.common;
    let Loaded {
        walk,
        functional,
        mut report,
    } = load("oracle", c)?;
    if a.size < 8 {
        return Err(Error::TruncationSize(a.size));
    }
    let lattice = report.time("stationary", || stationary_truncated(&walk, a.size))?;
    report.warnings.extend(lattice.stats.warnings.iter().cloned());
    let mut rows = Vec::new();
    for (name, f) in functionals(a.perf, functional) {
        let est = report.time(&format!("oracle_{name}"), || {
            oracle_performance(&walk, &f, a.size, true)
        })?;
        rows.push((name, est));
    }
    if let Some(path) = &c.dump_grid {
        write_grid(path, a.size, |i, j| lattice.at(i, j))?;
    }
    let mut table = format!("truncation {0} x {0}\n", a.size);
    let _ = writeln!(table, "pi(0,0) = {}", sig(lattice.at(0, 0)));
    let _ = writeln!(table, "tail mass = {}", sig(lattice.stats.tail_mass));
    let mut csv = String::from("performance,N,value,indicator,pi00\n");
    for (name, est) in &rows {
        let _ = writeln!(
            table,
            "{name} = {}  (|N - N/2| = {})",
            sig(est.value),
            opt_sig(est.indicator)
        );
        let _ = writeln!(
            csv,
            "{name},{},{},{},{}",
            a.size,
            sig(est.value),
            opt_sig(est.indicator),
            sig(est.origin_mass)
        );
    }
    report.payload = json!({
        "size": a.size,
        "origin_mass": lattice.at(0, 0),
        "stats": lattice.stats,
        "estimates": rows.iter().map(|(k, e)| json!({"name": k, "estimate": e})).collect::<Vec<_>>(),
    });
    strict_check(c, &report)?;
    Ok(Outcome {
        report,
        table,
        csv,
        code: EXIT_OK,
    })
}

pub fn error_code(_: &Error) -> i32 {
    EXIT_ERROR
}
