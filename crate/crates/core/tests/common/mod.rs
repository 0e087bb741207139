#![allow(dead_code)]

use proptest::prelude::*;
use qwgeom_core::curves::{Curve, CurveSystem};
use qwgeom_core::detection::{
    companion_horizontal, companion_vertical, detect, is_pairwise_coupled, Companion, CoupledChain, DetectionConfig,
    GeometricTerm,
};
use qwgeom_core::RandomWalk;

/// Valid walk with positive mass in every interior direction class needed
/// for detection (south/west-bound and north/east-bound).
pub fn arb_walk() -> impl Strategy<Value = RandomWalk> {
    (
        proptest::array::uniform9(0.0f64..1.0),
        0.05f64..1.0,
        0.05f64..1.0,
        proptest::array::uniform3(0.0f64..1.0),
        proptest::array::uniform3(0.0f64..1.0),
    )
        .prop_map(|(w, south, west, hf, vf)| {
            let mut raw = [[0.0; 3]; 3];
            for s in 0..3 {
                for t in 0..3 {
                    raw[s][t] = w[s * 3 + t];
                }
            }
            raw[1][0] += south;
            raw[0][1] += west;
            raw[2][2] += 0.02;
            let total: f64 = raw.iter().flatten().sum();
            for row in raw.iter_mut() {
                for p in row.iter_mut() {
                    *p /= total;
                }
            }
            let up: f64 = (0..3).map(|s| raw[s][2]).sum();
            let right: f64 = raw[2].iter().sum();
            let split = |f: [f64; 3], budget: f64| {
                let f = [f[0] + 0.05, f[1], f[2] + 0.05];
                let s: f64 = f.iter().sum();
                f.map(|x| x / s * budget)
            };
            let mut h = split(hf, 1.0 - up);
            let mut v = split(vf, 1.0 - right);
            let excess = h[2] + v[2] + raw[2][2] - 1.0;
            if excess > 0.0 {
                h[2] -= excess;
                h[1] += excess;
            }
            h[1] = 1.0 - up - h[0] - h[2];
            v[1] = 1.0 - right - v[0] - v[2];
            RandomWalk::new(raw, h, v)
        })
}

/// Largest Vieta inconsistency for the horizontal slice of `Q` at `y` and the
/// vertical slice at `x`, scaled by the root magnitude. `None` when neither
/// slice has a real root.
pub fn vieta_error(walk: &RandomWalk, x: f64, y: f64) -> Option<f64> {
    let curves = CurveSystem::new(walk);
    let cfg = DetectionConfig::default();
    let mut err: Option<f64> = None;
    let mut bump = |e: f64| err = Some(err.map_or(e, |v: f64| v.max(e)));

    let horizontal = curves.q_roots_fixed_y(y);
    if !horizontal.degenerate && horizontal.roots.len() == 2 {
        let (a, b, c) = (curves.abar.eval(y), curves.bbar.eval(y), curves.cbar.eval(y));
        for &r in &horizontal.roots {
            let other = c / (a * r);
            let scale = 1.0 + other.abs() + r.abs();
            bump((curves.eval(Curve::Q, other, y) / (scale * scale)).abs());
            bump(((r + other) + b / a).abs() / scale);
            if r > 0.0 && r < 1.0 && curves.eval(Curve::Q, r, y).abs() < 1e-12 {
                if let Ok(Companion::Term(t)) = companion_horizontal(&curves, &GeometricTerm::new(r, y), &cfg) {
                    bump((t.rho - other).abs() / scale);
                    bump((t.sigma - y).abs());
                }
            }
        }
    }
    let vertical = curves.q_roots_fixed_x(x);
    if !vertical.degenerate && vertical.roots.len() == 2 {
        let (a, b, c) = (curves.a.eval(x), curves.b.eval(x), curves.c.eval(x));
        for &r in &vertical.roots {
            let other = c / (a * r);
            let scale = 1.0 + other.abs() + r.abs();
            bump((curves.eval(Curve::Q, x, other) / (scale * scale)).abs());
            bump(((r + other) + b / a).abs() / scale);
            if r > 0.0 && r < 1.0 && curves.eval(Curve::Q, x, r).abs() < 1e-12 {
                if let Ok(Companion::Term(t)) = companion_vertical(&curves, &GeometricTerm::new(x, r), &cfg) {
                    bump((t.sigma - other).abs() / scale);
                    bump((t.rho - x).abs());
                }
            }
        }
    }
    err
}

/// Checks the no-cycle and parity invariants of one chain.
pub fn chain_invariants(chain: &CoupledChain) -> Result<(), String> {
    let tol = 1e-9;
    for (a, s) in chain.terms.iter().enumerate() {
        for t in &chain.terms[a + 1..] {
            if s.distance(t) <= tol {
                return Err(format!("repeated term ({}, {})", t.rho, t.sigma));
            }
        }
    }
    if !is_pairwise_coupled(&chain.terms, chain.first_move, tol) {
        return Err("consecutive terms do not alternate shared coordinates".into());
    }
    if let Some(hit) = chain.hit {
        let same = hit.set == chain.origin.set;
        let even = chain.terms.len().is_multiple_of(2);
        if same != even {
            return Err(format!(
                "chain of {} terms from {:?} ended in {:?}",
                chain.terms.len(),
                chain.origin.set,
                hit.set
            ));
        }
    }
    Ok(())
}

/// Runs detection and checks every chain it built. Walks whose detection
/// ends in an error (step cap) report it as `Err`.
pub fn detection_chains_ok(walk: &RandomWalk) -> Result<usize, String> {
    let out = detect(walk, &DetectionConfig::default()).map_err(|e| e.to_string())?;
    for chain in &out.diagnostics.chains {
        chain_invariants(chain)?;
    }
    Ok(out.diagnostics.chains.len())
}

/// No repeated terms and alternating shared coordinates for a candidate set.
pub fn set_invariants(terms: &[GeometricTerm]) -> Result<(), String> {
    use qwgeom_core::detection::first_coupling;
    let tol = 1e-9;
    for (a, s) in terms.iter().enumerate() {
        if terms[a + 1..].iter().any(|t| s.distance(t) <= tol) {
            return Err(format!("repeated term ({}, {})", s.rho, s.sigma));
        }
    }
    if terms.len() < 2 {
        return Ok(());
    }
    let first = first_coupling(terms, tol).ok_or("first pair shares no coordinate")?;
    if !is_pairwise_coupled(terms, first, tol) {
        return Err("set is not pairwise coupled".into());
    }
    if terms.len().is_multiple_of(2) {
        return Err(format!("even-sized set of {} terms", terms.len()));
    }
    Ok(())
}
