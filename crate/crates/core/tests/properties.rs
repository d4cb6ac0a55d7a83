use proptest::prelude::*;

use hfrac::asympt::{fit_power, Quantity, SweepRow, SweepTable};
use hfrac::bubble::{eval_U, eval_cutoff, eval_u_eps, smooth_step, BubbleSpec, Provenance};
use hfrac::hgroup::{compose, critical_exponent, dilate, hdist, hnorm, inverse, GroupPoint};
use hfrac::varsolve::DiscreteField;

fn point(n: usize) -> impl Strategy<Value = GroupPoint> {
    (prop::collection::vec(-3.0..3.0f64, 2 * n + 1)).prop_map(|v| GroupPoint::from_flat(&v).unwrap())
}

fn triple() -> impl Strategy<Value = (GroupPoint, GroupPoint, GroupPoint)> {
    (1usize..=3).prop_flat_map(|n| (point(n), point(n), point(n)))
}

fn close(a: &GroupPoint, b: &GroupPoint, tol: f64) -> bool {
    a.to_flat().iter().zip(b.to_flat()).all(|(u, v)| (u - v).abs() <= tol * (1.0 + u.abs()))
}

fn spec() -> BubbleSpec {
    let gp = critical_exponent(1, 0.25).unwrap();
    BubbleSpec::new(gp, 1.5, 12.0, 0.02, 1.0, Provenance::default()).unwrap()
}

proptest! {
    #[test]
    fn composition_is_associative((a, b, c) in triple()) {
        let l = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let r = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        prop_assert!(close(&l, &r, 1e-12));
    }

    #[test]
    fn inverse_cancels((a, _, _) in triple()) {
        let e = GroupPoint::origin(a.dim());
        prop_assert!(close(&compose(&a, &inverse(&a)).unwrap(), &e, 1e-12));
        prop_assert!(close(&compose(&inverse(&a), &a).unwrap(), &e, 1e-12));
    }

    #[test]
    fn dilation_is_an_automorphism((a, b, _) in triple(), lam in 0.05..5.0f64) {
        let l = dilate(lam, &compose(&a, &b).unwrap()).unwrap();
        let r = compose(&dilate(lam, &a).unwrap(), &dilate(lam, &b).unwrap()).unwrap();
        prop_assert!(close(&l, &r, 1e-12));
        prop_assert!((hnorm(&dilate(lam, &a).unwrap()) - lam * hnorm(&a)).abs() <= 1e-12 * (1.0 + lam * hnorm(&a)));
    }

    #[test]
    fn norm_is_symmetric_and_subadditive((a, b, _) in triple()) {
        prop_assert!((hnorm(&inverse(&a)) - hnorm(&a)).abs() <= 1e-13 * (1.0 + hnorm(&a)));
        prop_assert!(hnorm(&compose(&a, &b).unwrap()) <= hnorm(&a) + hnorm(&b) + 1e-12);
    }

    #[test]
    fn distance_is_left_invariant((a, b, g) in triple()) {
        let d = hdist(&a, &b).unwrap();
        let dg = hdist(&compose(&g, &a).unwrap(), &compose(&g, &b).unwrap()).unwrap();
        prop_assert!((d - dg).abs() <= 1e-10 * (1.0 + d));
        prop_assert!((d - hnorm(&compose(&inverse(&b), &a).unwrap())).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn bubble_is_positive_and_reflection_symmetric(a in point(1)) {
        let sp = spec();
        let u = eval_U(&sp, &a);
        prop_assert!(u > 0.0 && u <= sp.c);
        prop_assert!((eval_U(&sp, &inverse(&a)) - u).abs() <= 1e-14 * u);
    }

    #[test]
    fn truncated_bubble_is_supported_in_twice_the_cutoff(a in point(1)) {
        let sp = spec();
        let v = eval_u_eps(&sp, &a);
        let phi = eval_cutoff(sp.r, &a);
        prop_assert!((0.0..=1.0).contains(&phi));
        if hnorm(&a) >= 2.0 * sp.r {
            prop_assert_eq!(v, 0.0);
        }
        if hnorm(&a) <= sp.r {
            prop_assert_eq!(phi, 1.0);
        }
    }

    #[test]
    fn smooth_step_is_monotone(x in -0.5..1.5f64, dx in 0.0..0.5f64) {
        let (a, b) = (smooth_step(x), smooth_step(x + dx));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
        prop_assert!((smooth_step(x) + smooth_step(1.0 - x) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn power_fit_recovers_exact_laws(p in -4.0..4.0f64, c in 0.1..10.0f64, base in -5.0..5.0f64) {
        let gp = critical_exponent(1, 0.25).unwrap();
        let rows = [0.5, 0.35, 0.25, 0.18, 0.125]
            .iter()
            .map(|&e: &f64| SweepRow { eps: e, value: base + c * e.powf(p), stderr: 1e-9, failure: None })
            .collect();
        let table = SweepTable { quantity: Quantity::Seminorm, rows, params: gp, provenance: Provenance::default() };
        let fit = fit_power(&table, Some(base)).unwrap();
        prop_assert!((fit.exponent - p).abs() <= 1e-6);
        prop_assert!((fit.log_intercept - c.ln()).abs() <= 1e-5);
    }

    #[test]
    fn field_container_round_trips(values in prop::collection::vec(-1e12..1e12f64, 0..64)) {
        let f = DiscreteField::new(values);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        prop_assert_eq!(DiscreteField::read_from(buf.as_slice()).unwrap(), f);
    }
}
