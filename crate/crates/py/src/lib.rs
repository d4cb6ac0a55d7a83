//! Python bindings: group operations, the bubble family, estimators, the
//! discrete solver and power-law fits.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::hfrac::asympt::{self, Quantity, SweepRow, SweepTable};
use ::hfrac::bubble::{self, BubbleSpec, Provenance, ScalarField};
use ::hfrac::hgroup::{self, GroupParams, GroupPoint};
use ::hfrac::quad::{self, Estimate as CoreEstimate, QuadratureSpec, Region};
use ::hfrac::varsolve::{self, DiscreteDomain, DiscreteField, QuadraticForm, SolverConfig};
use ::hfrac::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Format(_) | Error::UnderResolved(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn point(v: Vec<f64>) -> PyResult<GroupPoint> {
    GroupPoint::from_flat(&v).map_err(err)
}

fn params(n: usize, s: f64) -> PyResult<GroupParams> {
    hgroup::critical_exponent(n, s).map_err(err)
}

fn quad_spec(samples: u64, seed: u64, region_radius: Option<f64>) -> PyResult<QuadratureSpec> {
    let qs = QuadratureSpec::monte_carlo(samples, seed).map_err(err)?;
    Ok(match region_radius {
        Some(radius) => qs.with_region(Region::Domain { radius }),
        None => qs,
    })
}

/// Group product of flat points `[x_1..x_N, y_1..y_N, t]`.
#[pyfunction]
fn compose(a: Vec<f64>, b: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(hgroup::compose(&point(a)?, &point(b)?).map_err(err)?.to_flat())
}

#[pyfunction]
fn inverse(a: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(hgroup::inverse(&point(a)?).to_flat())
}

#[pyfunction]
fn dilate(lam: f64, a: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(hgroup::dilate(lam, &point(a)?).map_err(err)?.to_flat())
}

#[pyfunction]
fn hnorm(a: Vec<f64>) -> PyResult<f64> {
    Ok(hgroup::hnorm(&point(a)?))
}

#[pyfunction]
fn hdist(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    hgroup::hdist(&point(a)?, &point(b)?).map_err(err)
}

/// `(Q, Q*)` for `ℍ^N` and order `s`.
#[pyfunction]
fn critical_exponent(n: usize, s: f64) -> PyResult<(usize, f64)> {
    let gp = params(n, s)?;
    Ok((gp.q, gp.q_star))
}

#[pyclass(name = "Estimate", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEstimate {
    #[pyo3(get)]
    value: f64,
    #[pyo3(get)]
    stderr: f64,
    #[pyo3(get)]
    samples: u64,
}

impl From<CoreEstimate> for PyEstimate {
    fn from(e: CoreEstimate) -> Self {
        Self { value: e.value, stderr: e.stderr, samples: e.samples_used }
    }
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!("Estimate(value={:e}, stderr={:e}, samples={})", self.value, self.stderr, self.samples)
    }
}

#[pyclass(name = "BubbleSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBubbleSpec {
    inner: BubbleSpec,
}

#[pymethods]
impl PyBubbleSpec {
    #[new]
    #[pyo3(signature = (n, s, kappa, sigma, eps, r))]
    fn new(n: usize, s: f64, kappa: f64, sigma: f64, eps: f64, r: f64) -> PyResult<Self> {
        let inner = BubbleSpec::new(params(n, s)?, kappa, sigma, eps, r, Provenance::default()).map_err(err)?;
        Ok(Self { inner })
    }

    /// Computes κ, Ŝ and σ by Monte Carlo and returns the calibrated bubble.
    #[staticmethod]
    #[pyo3(signature = (n, s, r=1.0, samples=1_000_000, seed=0))]
    fn calibrate(n: usize, s: f64, r: f64, samples: u64, seed: u64) -> PyResult<Self> {
        let (inner, _, _) = asympt::calibrate(params(n, s)?, r, &quad_spec(samples, seed, None)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: BubbleSpec::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Copy with `eps = eps_rel·ν·r/σ`.
    #[pyo3(signature = (eps_rel, nu=bubble::DEFAULT_EPS_SCALE))]
    fn with_relative_eps(&self, eps_rel: f64, nu: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_relative_eps_scaled(eps_rel, nu).map_err(err)? })
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[allow(non_snake_case)]
    fn eval_U(&self, p: Vec<f64>) -> PyResult<f64> {
        Ok(bubble::eval_U(&self.inner, &point(p)?))
    }

    #[allow(non_snake_case)]
    fn eval_U_eps(&self, p: Vec<f64>) -> PyResult<f64> {
        Ok(bubble::eval_U_eps(&self.inner, &point(p)?))
    }

    fn eval_u_eps(&self, p: Vec<f64>) -> PyResult<f64> {
        Ok(bubble::eval_u_eps(&self.inner, &point(p)?))
    }

    #[allow(non_snake_case)]
    fn horizontal_gradient_U_eps(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(bubble::horizontal_gradient_U_eps(&self.inner, &point(p)?))
    }

    /// `[u_ε]²` (truncated when `truncated`, else `[U_ε]²`).
    #[pyo3(signature = (truncated=true, samples=1_000_000, seed=0))]
    fn seminorm_sq(&self, truncated: bool, samples: u64, seed: u64) -> PyResult<PyEstimate> {
        let qs = quad_spec(samples, seed, None)?;
        let gp = self.inner.params;
        let e = if truncated {
            quad::gagliardo_sq(&self.inner.u_eps(), &gp, &qs)
        } else {
            quad::gagliardo_sq(&self.inner.u_eps_full(), &gp, &qs)
        };
        Ok(e.map_err(err)?.into())
    }

    /// `∫|u_ε|^p`.
    #[pyo3(signature = (p, samples=1_000_000, seed=0))]
    fn lp_integral(&self, p: f64, samples: u64, seed: u64) -> PyResult<PyEstimate> {
        let qs = quad_spec(samples, seed, None)?;
        Ok(quad::lp_integral(&self.inner.u_eps(), p, &self.inner.params, &qs).map_err(err)?.into())
    }

    /// `S_{s,λ}(u_ε)`.
    #[pyo3(signature = (lam, samples=1_000_000, seed=0))]
    fn s_lambda_quotient(&self, lam: f64, samples: u64, seed: u64) -> PyResult<PyEstimate> {
        let qs = quad_spec(samples, seed, None)?;
        Ok(quad::s_lambda_quotient(&self.inner.u_eps(), lam, &self.inner.params, &qs).map_err(err)?.into())
    }

    fn __repr__(&self) -> String {
        format!(
            "BubbleSpec(N={}, s={}, kappa={}, sigma={}, eps={:e}, r={})",
            self.inner.params.n, self.inner.params.s, self.inner.kappa, self.inner.sigma, self.inner.eps, self.inner.r
        )
    }
}

/// Haar volume of the Korányi ball of the given radius.
#[pyfunction]
#[pyo3(signature = (n, radius, samples=1_000_000, seed=0))]
fn ball_volume(n: usize, radius: f64, samples: u64, seed: u64) -> PyResult<PyEstimate> {
    let gp = params(n, 0.5)?;
    Ok(quad::ball_volume(radius, &gp, &quad_spec(samples, seed, None)?).map_err(err)?.into())
}

/// Point cloud over a Korányi ball with its assembled quadratic form.
#[pyclass(name = "Domain", frozen, skip_from_py_object)]
struct PyDomain {
    dom: DiscreteDomain,
    form: QuadraticForm,
}

#[pymethods]
impl PyDomain {
    #[new]
    #[pyo3(signature = (n_dim, s, radius, n, seed=0))]
    fn new(n_dim: usize, s: f64, radius: f64, n: usize, seed: u64) -> PyResult<Self> {
        let gp = params(n_dim, s)?;
        let dom = varsolve::build_domain(radius, n, &gp, seed).map_err(err)?;
        let form = varsolve::assemble_form(&dom, &gp).map_err(err)?;
        Ok(Self { dom, form })
    }

    fn __len__(&self) -> usize {
        self.dom.len()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.dom.h
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.dom.weights.clone()
    }

    #[getter]
    fn exterior_diag(&self) -> Vec<f64> {
        self.dom.exterior_diag.clone()
    }

    /// Flat coordinates of every point.
    fn points(&self) -> Vec<Vec<f64>> {
        self.dom.points.iter().map(|p| p.to_flat()).collect()
    }

    fn form_value(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        let (u, v) = (DiscreteField::new(u), DiscreteField::new(v));
        u.check_against(&self.dom).map_err(err)?;
        v.check_against(&self.dom).map_err(err)?;
        Ok(self.form.eval(&u, &v))
    }

    /// `(λ₁, eigenvector, residual, iterations)`.
    #[pyo3(signature = (tol=1e-8, max_iter=2000))]
    fn smallest_eigenpair(&self, tol: f64, max_iter: usize) -> PyResult<(f64, Vec<f64>, f64, usize)> {
        let cfg = SolverConfig { tol, max_iter, seed: 0 };
        let r = varsolve::smallest_eigenpair_with(&self.form, &self.dom, &cfg).map_err(err)?;
        Ok((r.eigenvalue, r.eigenvector.values, r.residual, r.iterations))
    }

    /// `(S_{s,λ}, minimizer)` with the minimizer of unit weighted `Q*`-norm.
    #[pyo3(signature = (lam, tol=1e-7))]
    fn minimize_quotient(&self, lam: f64, tol: f64) -> PyResult<(f64, Vec<f64>)> {
        let m = varsolve::minimize_quotient(&self.form, &self.dom, lam, tol).map_err(err)?;
        Ok((m.value, m.field.values))
    }

    fn weak_residual(&self, u: Vec<f64>, lam: f64) -> PyResult<f64> {
        varsolve::weak_residual(&DiscreteField::new(u), lam, &self.form, &self.dom).map_err(err)
    }

    fn energy(&self, u: Vec<f64>, lam: f64) -> PyResult<f64> {
        varsolve::energy(&DiscreteField::new(u), lam, &self.form, &self.dom).map_err(err)
    }
}

/// Weighted log-log fit of `values ≈ A·eps^α`; returns `(α, log A, R²)`.
#[pyfunction]
#[pyo3(signature = (eps, values, stderr, baseline=None))]
fn fit_power(eps: Vec<f64>, values: Vec<f64>, stderr: Vec<f64>, baseline: Option<f64>) -> PyResult<(f64, f64, f64)> {
    if eps.len() != values.len() || eps.len() != stderr.len() {
        return Err(PyValueError::new_err("eps, values and stderr must share a length"));
    }
    let table = SweepTable {
        quantity: Quantity::L2Norm,
        rows: eps
            .iter()
            .zip(&values)
            .zip(&stderr)
            .map(|((&eps, &value), &stderr)| SweepRow { eps, value, stderr, failure: None })
            .collect(),
        params: params(1, 0.5)?,
        provenance: Provenance::default(),
    };
    let fit = asympt::fit_power(&table, baseline).map_err(err)?;
    Ok((fit.exponent, fit.log_intercept, fit.r_squared))
}

/// Extremal profile `D(δ_{1/w}p)^{−(Q−2s)/4}` evaluated at a flat point.
#[pyfunction]
fn extremal(n: usize, s: f64, width: f64, p: Vec<f64>) -> PyResult<f64> {
    Ok(bubble::Extremal::new(params(n, s)?, 1.0, 1.0, width).eval(&point(p)?))
}

#[pymodule]
#[pyo3(name = "hfrac")]
fn hfrac_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(inverse, m)?)?;
    m.add_function(wrap_pyfunction!(dilate, m)?)?;
    m.add_function(wrap_pyfunction!(hnorm, m)?)?;
    m.add_function(wrap_pyfunction!(hdist, m)?)?;
    m.add_function(wrap_pyfunction!(critical_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(ball_volume, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power, m)?)?;
    m.add_function(wrap_pyfunction!(extremal, m)?)?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyBubbleSpec>()?;
    m.add_class::<PyDomain>()?;
    Ok(())
}
