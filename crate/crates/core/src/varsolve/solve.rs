//! First eigenpair, quotient minimization, weak residual and energy.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Par, Side};
use rand_distr::{Distribution, StandardNormal};

use crate::bubble::{Extremal, ScalarField, Truncated};
use crate::error::{Error, Result};
use crate::hgroup::GroupParams;
use crate::rng::{chunk_rng, STREAM_TEST_FIELDS};
use crate::varsolve::form::{dot, QuadraticForm};
use crate::varsolve::{DiscreteDomain, DiscreteField, SolverConfig, SpectralResult};

/// Iterations without progress after which minimization reports stagnation.
const STALL_WINDOW: usize = 50;

fn factor(mat: &Mat<f64>) -> Option<Llt<f64>> {
    // sequential kernels keep factorizations bit-identical across thread counts
    faer::set_global_parallelism(Par::Seq);
    mat.llt(Side::Lower).ok()
}

fn solve(llt: &Llt<f64>, rhs: &[f64]) -> Vec<f64> {
    let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = llt.solve(&b);
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_sizes(form: &QuadraticForm, dom: &DiscreteDomain) -> Result<()> {
    if form.len() != dom.len() {
        return Err(Error::invalid(format!(
            "form has {} rows but the domain has {} points",
            form.len(),
            dom.len()
        )));
    }
    Ok(())
}

pub fn smallest_eigenpair(form: &QuadraticForm, dom: &DiscreteDomain, tol: f64) -> Result<SpectralResult> {
    smallest_eigenpair_with(form, dom, &SolverConfig { tol, ..SolverConfig::default() })
}

/// Inverse iteration for `Q u = λ W u` from the constant field.
pub fn smallest_eigenpair_with(
    form: &QuadraticForm,
    dom: &DiscreteDomain,
    cfg: &SolverConfig,
) -> Result<SpectralResult> {
    cfg.validate()?;
    check_sizes(form, dom)?;
    let w = &dom.weights;
    let llt = factor(&form.mat)
        .ok_or_else(|| Error::invalid("the quadratic form is not positive definite"))?;
    let mut u = vec![1.0; dom.len()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for it in 1..=cfg.max_iter {
        let wu: Vec<f64> = u.iter().zip(w).map(|(a, b)| a * b).collect();
        let mut next = solve(&llt, &wu);
        let mass: f64 = next.iter().zip(w).map(|(a, b)| b * a * a).sum();
        let scale = mass.sqrt();
        next.iter_mut().for_each(|v| *v /= scale);
        u = next;
        let qu = form.apply(&u);
        let wu: Vec<f64> = u.iter().zip(w).map(|(a, b)| a * b).collect();
        let lambda = dot(&qu, &u) / dot(&wu, &u);
        let r: Vec<f64> = qu.iter().zip(&wu).map(|(q, m)| q - lambda * m).collect();
        let residual = norm2(&r) / norm2(&wu);
        if best.as_ref().is_none_or(|b| residual < b.0) {
            best = Some((residual, u.clone()));
        }
        if residual <= cfg.tol {
            if u.iter().sum::<f64>() < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
            return Ok(SpectralResult {
                eigenvalue: lambda,
                eigenvector: DiscreteField::new(u),
                residual,
                iterations: it,
            });
        }
    }
    let (residual, vec) = best.expect("at least one iteration");
    Err(Error::Convergence { iterations: cfg.max_iter, residual, best: Some(Box::new(vec)) })
}

/// Result of the constrained minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimizer {
    /// `Q(u,u) − λM(u,u)` at the minimizer, which has unit weighted `Q*`-norm.
    pub value: f64,
    pub field: DiscreteField,
    /// Weak residual of the rescaled minimizer.
    pub residual: f64,
    pub iterations: usize,
}

/// Interpolated truncated bubble of the given width with cutoff radius `r`.
pub fn start_field(dom: &DiscreteDomain, gp: &GroupParams, width: f64, r: f64) -> Result<DiscreteField> {
    if !(width > 0.0 && r > 0.0) {
        return Err(Error::invalid("start field needs positive width and cutoff radius"));
    }
    let f = Truncated { bubble: Extremal::new(*gp, 1.0, 1.0, width), r };
    Ok(dom.interpolate(|p| f.eval(p)))
}

/// Quotient `(Q(u,u) − λM(u,u)) / ‖u‖²_{Q*}` of an arbitrary field.
pub fn quotient_value(u: &DiscreteField, lambda: f64, form: &QuadraticForm, dom: &DiscreteDomain) -> Result<f64> {
    u.check_against(dom)?;
    let gp = dom.params()?;
    let norm = u.lp_norm(dom, gp.q_star);
    if norm == 0.0 {
        return Err(Error::invalid("quotient of the zero field"));
    }
    Ok((form.eval(u, u) - lambda * u.mass(dom)) / (norm * norm))
}

/// Minimizes the quotient from the interpolated bubble of relative width 0.25
/// (width `0.025·r`, cutoff `r = R/4`).
pub fn minimize_quotient(form: &QuadraticForm, dom: &DiscreteDomain, lambda: f64, tol: f64) -> Result<Minimizer> {
    let gp = dom.params()?;
    let r = dom.radius / 4.0;
    let start = start_field(dom, &gp, 0.025 * r, r)?;
    let cfg = SolverConfig { tol, ..SolverConfig::default() };
    minimize_quotient_from(form, dom, lambda, &start, &cfg)
}

/// Minimizes `Q(u,u) − λM(u,u)` over `‖u‖_{Q*,w} = 1`.
///
/// Each step moves along `u − R(u)·A⁻¹(W|u|^{p−2}u)` with `A = Q − λW`, the
/// preconditioned projected gradient; the full step is the nonlinear inverse
/// power iteration, and steps are halved while they fail to decrease the
/// quotient. `A⁻¹` has positive entries, so nonnegative iterates stay
/// positive; the start is replaced by its absolute value.
pub fn minimize_quotient_from(
    form: &QuadraticForm,
    dom: &DiscreteDomain,
    lambda: f64,
    start: &DiscreteField,
    cfg: &SolverConfig,
) -> Result<Minimizer> {
    cfg.validate()?;
    check_sizes(form, dom)?;
    start.check_against(dom)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let gp = dom.params()?;
    let p = gp.q_star;
    let w = &dom.weights;
    let mut a = form.mat.clone();
    for (i, wi) in w.iter().enumerate() {
        a[(i, i)] -= lambda * wi;
    }
    let llt = factor(&a).ok_or_else(|| {
        Error::invalid(format!("lambda = {lambda} is not below the first eigenvalue of the domain"))
    })?;

    let lp_normalize = |v: &[f64]| -> Result<Vec<f64>> {
        let s: f64 = v.iter().zip(w).map(|(u, wi)| wi * u.abs().powf(p)).sum();
        let n = s.powf(1.0 / p);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("minimization reached the zero field"));
        }
        Ok(v.iter().map(|x| x / n).collect())
    };
    let apply_a = |v: &[f64]| -> Vec<f64> {
        let mut q = form.apply(v);
        q.iter_mut().zip(v.iter().zip(w)).for_each(|(qi, (vi, wi))| *qi -= lambda * wi * vi);
        q
    };
    let state = |u: Vec<f64>| -> Result<(Vec<f64>, f64, f64)> {
        let au = apply_a(&u);
        let value = dot(&au, &u);
        let res = scaled_residual(&u, value, p, lambda, form, dom);
        Ok((u, value, res))
    };

    let u0: Vec<f64> = start.values.iter().map(|v| v.abs()).collect();
    let (mut u, mut value, mut res) = state(lp_normalize(&u0)?)?;
    let mut best_value = value;
    let mut best_res = res;
    let mut last_progress = 0;
    for it in 1..=cfg.max_iter {
        if res <= cfg.tol {
            return finish(u, value, res, it - 1, form, dom, lambda);
        }
        let g: Vec<f64> = u.iter().zip(w).map(|(x, wi)| wi * x.abs().powf(p - 2.0) * x).collect();
        let y = lp_normalize(&solve(&llt, &g))?;
        let mut tau = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = u.iter().zip(&y).map(|(a, b)| a + tau * (b - a)).collect();
            let cand = state(lp_normalize(&trial)?)?;
            if cand.1 <= value * (1.0 + 1e-14) {
                accepted = Some(cand);
                break;
            }
            tau *= 0.5;
        }
        let Some((nu, nv, nr)) = accepted else {
            return Err(Error::Stagnation { iterations: it, residual: res });
        };
        u = nu;
        value = nv;
        res = nr;
        if value < best_value * (1.0 - 1e-12) || res < best_res * (1.0 - 1e-3) {
            last_progress = it;
        }
        best_value = best_value.min(value);
        best_res = best_res.min(res);
        if it - last_progress >= STALL_WINDOW {
            return Err(Error::Stagnation { iterations: it, residual: res });
        }
    }
    if res <= cfg.tol {
        return finish(u, value, res, cfg.max_iter, form, dom, lambda);
    }
    Err(Error::Convergence { iterations: cfg.max_iter, residual: res, best: Some(Box::new(u)) })
}

fn finish(
    u: Vec<f64>,
    value: f64,
    residual: f64,
    iterations: usize,
    form: &QuadraticForm,
    dom: &DiscreteDomain,
    lambda: f64,
) -> Result<Minimizer> {
    // the absolute value has the same constraint norm and no larger quotient
    let u: Vec<f64> = u.into_iter().map(f64::abs).collect();
    let field = DiscreteField::new(u);
    let value_abs = form.eval(&field, &field) - lambda * field.mass(dom);
    let value = value.min(value_abs);
    Ok(Minimizer { value, field, residual, iterations })
}

/// Weak residual of `S^{1/(p−2)}u` given `Au` and `S = uᵀAu` for `‖u‖_p = 1`.
fn scaled_residual(
    u: &[f64],
    value: f64,
    p: f64,
    lambda: f64,
    form: &QuadraticForm,
    dom: &DiscreteDomain,
) -> f64 {
    if value <= 0.0 {
        return f64::INFINITY;
    }
    let c = value.powf(1.0 / (p - 2.0));
    let v: Vec<f64> = u.iter().map(|x| c * x).collect();
    weak_residual_raw(&v, lambda, form, dom, p, true)
}

fn weak_residual_raw(v: &[f64], lambda: f64, form: &QuadraticForm, dom: &DiscreteDomain, p: f64, critical: bool) -> f64 {
    let w = &dom.weights;
    let qv = form.apply(v);
    let wv: Vec<f64> = v.iter().zip(w).map(|(a, b)| a * b).collect();
    let nl: Vec<f64> = if critical {
        v.iter().zip(w).map(|(x, wi)| wi * x.abs().powf(p - 2.0) * x).collect()
    } else {
        vec![0.0; v.len()]
    };
    let r: Vec<f64> = (0..v.len()).map(|i| qv[i] - lambda * wv[i] - nl[i]).collect();
    let scale = norm_inf(&qv) + lambda * norm_inf(&wv) + norm_inf(&nl);
    if scale == 0.0 {
        return 0.0;
    }
    norm_inf(&r) / scale
}

/// Largest point-mass residual of `Q(v,e_i) − λM(v,e_i) − Σ w|v|^{p−2}v e_i`,
/// normalized by the sizes of the three terms.
pub fn weak_residual(u: &DiscreteField, lambda: f64, form: &QuadraticForm, dom: &DiscreteDomain) -> Result<f64> {
    u.check_against(dom)?;
    check_sizes(form, dom)?;
    let gp = dom.params()?;
    Ok(weak_residual_raw(&u.values, lambda, form, dom, gp.q_star, true))
}

/// Residual of the linear equation `Qv = λWv`, same normalization.
pub fn weak_residual_linear(u: &DiscreteField, lambda: f64, form: &QuadraticForm, dom: &DiscreteDomain) -> Result<f64> {
    u.check_against(dom)?;
    check_sizes(form, dom)?;
    Ok(weak_residual_raw(&u.values, lambda, form, dom, 2.0, false))
}

/// `½Q(u,u) − (λ/2)M(u,u) − (1/Q*)Σ w_i|u_i|^{Q*}`.
pub fn energy(u: &DiscreteField, lambda: f64, form: &QuadraticForm, dom: &DiscreteDomain) -> Result<f64> {
    u.check_against(dom)?;
    check_sizes(form, dom)?;
    let p = dom.params()?.q_star;
    let crit: f64 = u.values.iter().zip(&dom.weights).map(|(x, w)| w * x.abs().powf(p)).sum();
    Ok(0.5 * form.eval(u, u) - 0.5 * lambda * u.mass(dom) - crit / p)
}

/// Analytic gradient `Qu − λWu − W|u|^{p−2}u` of the energy.
pub fn energy_gradient(u: &DiscreteField, lambda: f64, form: &QuadraticForm, dom: &DiscreteDomain) -> Result<Vec<f64>> {
    u.check_against(dom)?;
    check_sizes(form, dom)?;
    let p = dom.params()?.q_star;
    let qu = form.apply(&u.values);
    Ok((0..u.len())
        .map(|i| {
            let x = u.values[i];
            let w = dom.weights[i];
            qu[i] - lambda * w * x - w * x.abs().powf(p - 2.0) * x
        })
        .collect())
}

/// Central-difference check of the energy gradient along random unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub directions: usize,
    /// Largest `|fd − ⟨g,d⟩|` relative to `‖Qu‖₂`.
    pub max_error: f64,
    /// Gradient norm estimated from the finite differences, relative to `‖Qu‖₂`.
    pub fd_gradient_norm: f64,
    /// Analytic gradient norm relative to `‖Qu‖₂`.
    pub gradient_norm: f64,
}

pub fn gradient_oracle(
    u: &DiscreteField,
    lambda: f64,
    form: &QuadraticForm,
    dom: &DiscreteDomain,
    directions: usize,
    seed: u64,
) -> Result<GradientCheck> {
    if directions == 0 {
        return Err(Error::invalid("need at least one direction"));
    }
    let g = energy_gradient(u, lambda, form, dom)?;
    let scale = norm2(&form.apply(&u.values));
    if scale == 0.0 {
        return Err(Error::invalid("gradient check at the zero field"));
    }
    let m = u.len();
    let step = 1e-4 * norm2(&u.values);
    let mut max_error: f64 = 0.0;
    let mut sq = 0.0;
    for k in 0..directions {
        let mut rng = chunk_rng(seed, STREAM_TEST_FIELDS, k as u64);
        let mut d: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dn = norm2(&d);
        d.iter_mut().for_each(|v| *v /= dn);
        let shifted = |sign: f64| {
            DiscreteField::new(u.values.iter().zip(&d).map(|(a, b)| a + sign * step * b).collect())
        };
        let ep = energy(&shifted(1.0), lambda, form, dom)?;
        let em = energy(&shifted(-1.0), lambda, form, dom)?;
        let fd = (ep - em) / (2.0 * step);
        max_error = max_error.max((fd - dot(&g, &d)).abs() / scale);
        sq += fd * fd;
    }
    Ok(GradientCheck {
        directions,
        max_error,
        fd_gradient_norm: (m as f64 * sq / directions as f64).sqrt() / scale,
        gradient_norm: norm2(&g) / scale,
    })
}
