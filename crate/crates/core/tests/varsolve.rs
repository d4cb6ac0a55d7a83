use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hfrac::hgroup::{critical_exponent, hnorm, GroupParams, GroupPoint};
use hfrac::varsolve::{
    assemble_form, build_domain, exterior_diagonal, gradient_oracle, minimize_quotient, quotient_value,
    smallest_eigenpair, weak_residual, weak_residual_linear, DiscreteDomain, DiscreteField, QuadraticForm,
};
use hfrac::Error;

fn gp() -> GroupParams {
    critical_exponent(1, 0.25).unwrap()
}

fn setup(radius: f64, n: usize) -> (DiscreteDomain, QuadraticForm) {
    let dom = build_domain(radius, n, &gp(), 0).unwrap();
    let form = assemble_form(&dom, &gp()).unwrap();
    (dom, form)
}

fn random_field(dom: &DiscreteDomain, seed: u64) -> DiscreteField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DiscreteField::new((0..dom.len()).map(|_| rng.random::<f64>() - 0.3).collect())
}

#[test]
fn cloud_volume_matches_the_korányi_ball() {
    // |B_R| = (π²/2) R⁴ for N = 1, by integrating 2√(R⁴ − |z|⁴) over the disc
    let dom = build_domain(4.0, 1000, &gp(), 0).unwrap();
    let exact = PI * PI / 2.0 * 4f64.powi(4);
    assert!((dom.volume() / exact - 1.0).abs() < 0.02, "{} vs {exact}", dom.volume());
    assert!(dom.points.iter().all(|p| hnorm(p) < 4.0));
    dom.check().unwrap();
}

#[test]
fn mesh_scale_shrinks_with_more_points() {
    let a = build_domain(4.0, 500, &gp(), 0).unwrap();
    let b = build_domain(4.0, 2000, &gp(), 0).unwrap();
    assert!(b.h < a.h);
    assert!(b.len() > a.len());
}

#[test]
fn too_few_points_is_under_resolved() {
    assert!(matches!(build_domain(4.0, 10, &gp(), 0), Err(Error::UnderResolved(_))));
}

#[test]
fn exterior_term_at_the_centre_has_a_closed_form() {
    // ∫_{|η|>R} |η|^{−Q−2s} dη = Q|B_1| ∫_R^∞ ρ^{−1−2s} dρ
    let g = gp();
    for radius in [1.0, 4.0] {
        let k = exterior_diagonal(&[GroupPoint::origin(1)], radius, &g, 3)[0];
        let exact = g.qf() * PI * PI / 2.0 * radius.powf(-2.0 * g.s) / (2.0 * g.s);
        assert!((k / exact - 1.0).abs() < 1e-6, "{k} vs {exact}");
    }
}

#[test]
fn exterior_term_grows_towards_the_boundary() {
    let pts: Vec<GroupPoint> =
        [0.0, 1.0, 2.0, 3.0, 3.8].iter().map(|x| GroupPoint::new(&[*x], &[0.0], 0.0).unwrap()).collect();
    let k = exterior_diagonal(&pts, 4.0, &gp(), 0);
    assert!(k.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(k.windows(2).all(|w| w[1] > w[0]), "{k:?}");
}

#[test]
fn form_is_symmetric_and_constants_only_see_the_exterior() {
    let (dom, form) = setup(4.0, 400);
    for i in (0..dom.len()).step_by(7) {
        for j in (0..dom.len()).step_by(11) {
            assert_eq!(form.entry(i, j), form.entry(j, i));
        }
    }
    let one = DiscreteField::new(vec![1.0; dom.len()]);
    let expected: f64 = 2.0 * dom.weights.iter().zip(&dom.exterior_diag).map(|(w, k)| w * k).sum::<f64>();
    let got = form.eval(&one, &one);
    assert!((got / expected - 1.0).abs() < 1e-10, "{got} vs {expected}");
}

#[test]
fn eigenpair_satisfies_poincaré_and_is_positive() {
    let (dom, form) = setup(4.0, 500);
    let sp = smallest_eigenpair(&form, &dom, 1e-8).unwrap();
    assert!(sp.eigenvalue > 0.0 && sp.residual <= 1e-8);
    assert!(sp.eigenvector.values.iter().all(|v| *v > 0.0));
    assert!((sp.eigenvector.mass(&dom) - 1.0).abs() < 1e-10);
    assert!(weak_residual_linear(&sp.eigenvector, sp.eigenvalue, &form, &dom).unwrap() < 1e-6);
    for seed in 0..100 {
        let u = random_field(&dom, seed);
        assert!(form.eval(&u, &u) >= sp.eigenvalue * u.mass(&dom) * (1.0 - 1e-12));
    }
}

#[test]
fn eigenvalue_follows_the_dilation_law() {
    // the clouds are dilates of each other, so λ₁(B_2) = 2^{2s} λ₁(B_4)
    let g = gp();
    let (d2, f2) = setup(2.0, 500);
    let (d4, f4) = setup(4.0, 500);
    let l2 = smallest_eigenpair(&f2, &d2, 1e-8).unwrap().eigenvalue;
    let l4 = smallest_eigenpair(&f4, &d4, 1e-8).unwrap().eigenvalue;
    assert!(l2 > l4);
    let ratio = l2 / l4 / 2f64.powf(2.0 * g.s);
    assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
}

#[test]
fn minimizer_is_a_positive_weak_solution() {
    let g = gp();
    let (dom, form) = setup(4.0, 500);
    let l1 = smallest_eigenpair(&form, &dom, 1e-8).unwrap().eigenvalue;
    let lambda = 0.5 * l1;
    let m = minimize_quotient(&form, &dom, lambda, 1e-7).unwrap();
    assert!(m.field.values.iter().all(|v| *v > 0.0));
    assert!((quotient_value(&m.field, lambda, &form, &dom).unwrap() / m.value - 1.0).abs() < 1e-10);
    let c = m.value.powf(1.0 / (g.q_star - 2.0));
    let v = DiscreteField::new(m.field.values.iter().map(|x| c * x).collect());
    assert!(weak_residual(&v, lambda, &form, &dom).unwrap() <= 1e-6);
    let oracle = gradient_oracle(&v, lambda, &form, &dom, 20, 0).unwrap();
    assert!(oracle.fd_gradient_norm <= 1e-6);

    let s0 = minimize_quotient(&form, &dom, 0.0, 1e-7).unwrap().value;
    assert!(m.value < s0);
}

#[test]
fn gradient_matches_finite_differences_off_critical_points() {
    let (dom, form) = setup(4.0, 300);
    let u = random_field(&dom, 5);
    let check = gradient_oracle(&u, 10.0, &form, &dom, 20, 1).unwrap();
    assert!(check.gradient_norm > 1e-3);
    assert!(check.max_error < 1e-6 * check.gradient_norm.max(1.0), "{check:?}");
}

#[test]
fn lambda_at_or_above_the_eigenvalue_is_rejected() {
    let (dom, form) = setup(4.0, 300);
    let l1 = smallest_eigenpair(&form, &dom, 1e-8).unwrap().eigenvalue;
    assert!(minimize_quotient(&form, &dom, 1.01 * l1, 1e-7).is_err());
}

#[test]
fn containers_round_trip_and_reject_mismatches() {
    let dom = build_domain(4.0, 200, &gp(), 0).unwrap();
    let mut buf = Vec::new();
    dom.write_to(&mut buf).unwrap();
    assert_eq!(DiscreteDomain::read_from(buf.as_slice()).unwrap(), dom);
    assert!(matches!(DiscreteField::read_from(buf.as_slice()), Err(Error::Format(_))));
    buf[0] = b'X';
    assert!(matches!(DiscreteDomain::read_from(buf.as_slice()), Err(Error::Format(_))));

    let field = random_field(&dom, 0);
    let mut fb = Vec::new();
    field.write_to(&mut fb).unwrap();
    fb.truncate(fb.len() - 3);
    assert!(DiscreteField::read_from(fb.as_slice()).is_err());
}

#[test]
fn build_is_reproducible_and_seed_dependent() {
    let a = build_domain(4.0, 300, &gp(), 7).unwrap();
    let b = build_domain(4.0, 300, &gp(), 7).unwrap();
    let c = build_domain(4.0, 300, &gp(), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.points, c.points);
}
