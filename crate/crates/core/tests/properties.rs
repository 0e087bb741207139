mod common;

use proptest::prelude::*;
use qwgeom_core::curves::{Curve, CurveSystem};
use qwgeom_core::detection::{detect, DetectionConfig};
use qwgeom_core::measure::{balance_residuals, chain_coefficients, solve_coefficients};
use qwgeom_core::perturbation::{build_product_perturbation, SelectionPolicy};
use qwgeom_core::Error;

use common::{arb_walk, detection_chains_ok, vieta_error};

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn generated_walks_are_valid(w in arb_walk()) {
        let report = w.validate();
        prop_assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn unit_point_lies_on_interior_curve(w in arb_walk()) {
        let q = CurveSystem::new(&w).eval(Curve::Q, 1.0, 1.0);
        prop_assert!(q.abs() <= 1e-12, "Q(1,1) = {q}");
    }

    #[test]
    fn companions_satisfy_vieta(w in arb_walk(), x in 0.01f64..0.99, y in 0.01f64..0.99) {
        let err = vieta_error(&w, x, y);
        prop_assume!(err.is_some());
        prop_assert!(err.unwrap() <= 1e-10, "{err:?}");
    }

    #[test]
    fn detection_chains_never_cycle(w in arb_walk()) {
        if let Err(e) = detection_chains_ok(&w) {
            prop_assert!(e.contains("step cap"), "{e}");
        }
    }

    #[test]
    fn representable_measures_balance(w in arb_walk()) {
        let out = detect(&w, &DetectionConfig::default()).unwrap();
        if out.representable {
            let m = solve_coefficients(&w, &out.gamma).unwrap();
            prop_assert!(balance_residuals(&w, &m, 50) <= 1e-10);
            let chained = chain_coefficients(&w, &out.gamma).unwrap();
            for (a, b) in m.alphas.iter().zip(&chained.alphas) {
                prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn product_targets_balance_perturbed_walk(w in arb_walk(), t in 0.05f64..0.95) {
        let curves = CurveSystem::new(&w);
        let Ok((lo, hi)) = curves.admissible_x_span(1e-6) else { return Ok(()); };
        let rho = lo + t * (hi - lo);
        let roots = curves.q_roots_fixed_x(rho).roots;
        let Some(&sigma) = roots.iter().find(|s| **s > 0.0 && **s < 1.0) else { return Ok(()); };
        match build_product_perturbation(&w, rho, sigma, SelectionPolicy::Projection) {
            Ok(p) => prop_assert!(p.residual <= 1e-10, "{}", p.residual),
            Err(Error::Verification(r)) => prop_assert!(false, "residual {r:e}"),
            Err(_) => {}
        }
    }
}
