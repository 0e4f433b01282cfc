//! Property checks over random admissible parameters.

use proptest::prelude::*;
use sojourn::analytic::{mills_bounds, normal_survival, prop2_bounds};
use sojourn::model::{
    classify_regime, critical_points, derive_constants, validate_params, ModelParams, Regime,
    SojournThreshold, DEFAULT_BOUNDARY_TOL,
};

fn params() -> impl Strategy<Value = ModelParams> {
    (
        0.05f64..5.0,
        0.01f64..0.99,
        0.05f64..5.0,
        0.01f64..4.0,
        0.05f64..0.95,
    )
        .prop_map(|(c2, frac, q1, dq, h)| {
            let c1 = c2 / frac;
            validate_params(c1, c2, q1, q1 + dq, h).unwrap()
        })
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn t1_below_t2(p in params()) {
        let cp = critical_points(&p);
        prop_assert!(cp.t1 < cp.t2);
        prop_assert!(cp.t_star > 0.0);
    }

    #[test]
    fn eta_forms_agree(p in params()) {
        let cp = critical_points(&p);
        let dc = derive_constants(&p, &SojournThreshold::constant(0.0).unwrap()).unwrap();
        let closed = (p.c1() * p.q2() - p.q1() * p.c2()) / (p.c1() - p.c2());
        let via2 = p.c2() * cp.t_star + p.q2();
        // Both lines meet at t_star, so every route gives the same value.
        prop_assert!(ulps(dc.eta, via2) <= 4, "eta {} vs {}", dc.eta, via2);
        // The closed form cancels when c1 is close to c2; bound by its conditioning.
        let cond = (p.c1() * p.q2() + p.q1() * p.c2()) / (p.c1() - p.c2());
        prop_assert!((dc.eta - closed).abs() <= 8.0 * f64::EPSILON * (cond + dc.eta.abs()));
    }

    #[test]
    fn eta_is_tight_on_round_numbers(c2 in 1u32..20, dc_ in 1u32..20, q1 in 1u32..20, dq in 1u32..20) {
        let (c2, c1, q1) = (c2 as f64, (c2 + dc_) as f64, q1 as f64);
        let q2 = q1 + dq as f64;
        let p = validate_params(c1, c2, q1, q2, 0.5).unwrap();
        let dc = derive_constants(&p, &SojournThreshold::constant(0.0).unwrap()).unwrap();
        let closed = (c1 * q2 - q1 * c2) / (c1 - c2);
        prop_assert!(ulps(dc.eta, closed) <= 4, "eta {} vs {}", dc.eta, closed);
    }

    #[test]
    fn slope_difference_identity(p in params()) {
        let dc = derive_constants(&p, &SojournThreshold::constant(0.0).unwrap()).unwrap();
        let det = p.c1() * p.q2() - p.q1() * p.c2();
        let expect = 2.0 * (p.c1() - p.c2()) * (p.q2() - p.q1()) / det;
        let got = dc.drift_slope_neg - dc.drift_slope_pos;
        prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        prop_assert!(got > 0.0);
    }

    #[test]
    fn regimes_partition_the_parameter_space(p in params()) {
        let cp = critical_points(&p);
        let r = classify_regime(&cp, DEFAULT_BOUNDARY_TOL);
        let inside = cp.t_star > cp.t1 && cp.t_star < cp.t2;
        match r {
            Regime::Case2 => prop_assert!(inside),
            Regime::Case1Interior(_) | Regime::Case1Boundary(_) => {
                prop_assert!(!inside || (cp.t_star - cp.t1).abs() <= 1e-9 * cp.t1
                    || (cp.t_star - cp.t2).abs() <= 1e-9 * cp.t2);
            }
        }
        // Exact classification with zero tolerance agrees away from the boundary.
        let exact = classify_regime(&cp, 0.0);
        if (cp.t_star - cp.t1).abs() > 1e-6 * cp.t1 && (cp.t_star - cp.t2).abs() > 1e-6 * cp.t2 {
            prop_assert_eq!(exact, r);
        }
    }

    #[test]
    fn mills_ratio_brackets_the_tail(x in 0.05f64..37.0) {
        let (lo, hi) = mills_bounds(x).unwrap();
        let psi = normal_survival(x);
        prop_assert!(lo <= psi * (1.0 + 1e-13), "{lo} > {psi}");
        prop_assert!(psi <= hi * (1.0 + 1e-13), "{psi} > {hi}");
    }

    #[test]
    fn bounds_are_ordered_beyond_threshold(
        c2 in 0.5f64..2.0, gap in 0.2f64..2.0, q1 in 1.0f64..4.0, h in 0.1f64..0.45,
        t0 in 0.1f64..5.0, cbar in 0.01f64..0.99, extra in 0.0f64..20.0
    ) {
        let c1 = c2 + gap;
        // Put t_star between t1 and t2 by choosing q2 from t_star = (q2 - q1) / (c1 - c2).
        let ratio = h / (1.0 - h);
        let t1 = q1 * ratio / c1;
        // Aim t_star just above t1.
        let t_star = 1.05 * t1;
        let q2 = q1 + t_star * gap;
        let p = validate_params(c1, c2, q1, q2, h).unwrap();
        let cp = critical_points(&p);
        prop_assume!(classify_regime(&cp, DEFAULT_BOUNDARY_TOL) == Regime::Case2);
        let st = SojournThreshold::constant(t0).unwrap();
        let dc = derive_constants(&p, &st).unwrap();
        let probe = prop2_bounds(&p, &dc, t0, 1.0, cbar).unwrap();
        let u = probe.ordering_threshold * (1.0 + 1e-9) + extra;
        let b = prop2_bounds(&p, &dc, t0, u.max(1e-6), cbar).unwrap();
        prop_assert!(b.is_ordered(), "u = {u}: {b:?}");
    }
}
