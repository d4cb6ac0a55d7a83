//! The extremal bubble, its normalizations and rescalings, the smooth cutoff,
//! and the truncated test family.
//!
//! With `a = (Q−2s)/4` and `D(ξ) = t² + (1 + |x|² + |y|²)²`:
//!
//! * `U = C·D^{−a}`, `ū = U/κ`, `u*(ξ) = ū(δ_{1/σ}ξ)`,
//! * `U_ε(ξ) = ε^{−(Q−2s)/2} u*(δ_{1/ε}ξ)`,
//! * `u_ε = U_ε·φ` with `φ = 1` on `B_r` and `φ = 0` off `B_{2r}`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgroup::{dilate_unchecked, hdist_unchecked, hnorm, GroupParams, GroupPoint};
use crate::quad::sampling::{sphere_direction, unit_ball_point};
use crate::rng::{chunk_rng, map_chunks, STREAM_INCREMENT, STREAM_SUP};

/// A real-valued function on `ℍ^N` that the estimators can integrate.
///
/// `bound_outside(R)` must bound `|u(ξ)|` for every `|ξ| ≥ R`; the seminorm
/// estimator uses it to bound its truncated far field. `scales` lists the
/// radii at which the field has structure, used to place importance samples.
/// Default ratio of bubble width to cutoff radius at relative parameter 1.
/// Widths must sit well inside the cutoff for the concentration asymptotics
/// to be visible across the usual grid `0.5 … 0.125`.
pub const DEFAULT_EPS_SCALE: f64 = 0.1;

pub trait ScalarField: Send + Sync {
    fn eval(&self, p: &GroupPoint) -> f64;
    fn label(&self) -> String;
    fn dim(&self) -> usize;
    fn support_radius(&self) -> Option<f64>;
    fn bound_outside(&self, radius: f64) -> f64;
    fn scales(&self) -> Vec<f64>;
}

/// Quantities recorded alongside numerically computed constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub method: String,
    pub samples: u64,
    pub seed: u64,
    pub annuli: usize,
    pub kappa_stderr: f64,
    pub s_hat: f64,
    pub s_hat_stderr: f64,
    /// Digest of the quadrature spec that produced the constants.
    #[serde(default)]
    pub spec_hash: String,
    /// Digest of the run configuration, when produced by the command line.
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleSpec {
    pub params: GroupParams,
    pub c: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub eps: f64,
    pub r: f64,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct BubbleDoc {
    #[serde(rename = "N")]
    n: usize,
    s: f64,
    #[serde(rename = "C")]
    c: f64,
    kappa: f64,
    sigma: f64,
    eps: f64,
    r: f64,
    provenance: Provenance,
}

impl BubbleSpec {
    pub fn new(
        params: GroupParams,
        kappa: f64,
        sigma: f64,
        eps: f64,
        r: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let spec = Self { params, c: 1.0, kappa, sigma, eps, r, provenance };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("C", self.c),
            ("kappa", self.kappa),
            ("sigma", self.sigma),
            ("eps", self.eps),
            ("r", self.r),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        crate::hgroup::critical_exponent(self.params.n, self.params.s)?;
        Ok(())
    }

    /// Unit for relative concentration parameters: at `eps = eps_unit()` the
    /// bubble width `εσ` is `DEFAULT_EPS_SCALE·r`.
    pub fn eps_unit(&self) -> f64 {
        self.eps_unit_with(DEFAULT_EPS_SCALE)
    }

    /// `ν·r/σ`: the width `εσ` equals `ν·r` at relative parameter 1.
    pub fn eps_unit_with(&self, nu: f64) -> f64 {
        nu * self.r / self.sigma
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut s = self.clone();
        s.eps = eps;
        s.validate()?;
        Ok(s)
    }

    /// Sets `eps = eps_rel · eps_unit()`.
    pub fn with_relative_eps(&self, eps_rel: f64) -> Result<Self> {
        self.with_eps(eps_rel * self.eps_unit())
    }

    /// Sets `eps = eps_rel · ν·r/σ`.
    pub fn with_relative_eps_scaled(&self, eps_rel: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("eps scale must be positive, got {nu}")));
        }
        self.with_eps(eps_rel * self.eps_unit_with(nu))
    }

    /// Width `εσ` of `U_ε`.
    pub fn width(&self) -> f64 {
        self.eps * self.sigma
    }

    /// `ε^{−(Q−2s)/2}/κ`, the amplitude of `U_ε`.
    pub fn amplitude(&self) -> f64 {
        self.eps.powf(-self.params.q_minus_2s() / 2.0) / self.kappa
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = BubbleDoc {
            n: self.params.n,
            s: self.params.s,
            c: self.c,
            kappa: self.kappa,
            sigma: self.sigma,
            eps: self.eps,
            r: self.r,
            provenance: self.provenance.clone(),
        };
        // routing through Value sorts keys
        Ok(serde_json::to_string_pretty(&serde_json::to_value(doc)?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BubbleDoc = serde_json::from_str(text)?;
        let params = crate::hgroup::critical_exponent(doc.n, doc.s)?;
        let spec = Self {
            params,
            c: doc.c,
            kappa: doc.kappa,
            sigma: doc.sigma,
            eps: doc.eps,
            r: doc.r,
            provenance: doc.provenance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn extremal(&self) -> Extremal {
        Extremal::new(self.params, self.c, 1.0, 1.0)
    }

    pub fn normalized(&self) -> Extremal {
        Extremal::new(self.params, self.c, 1.0 / self.kappa, 1.0)
    }

    pub fn u_star(&self) -> Extremal {
        Extremal::new(self.params, self.c, 1.0 / self.kappa, self.sigma)
    }

    pub fn u_eps_full(&self) -> Extremal {
        Extremal::new(self.params, self.c, self.amplitude(), self.width())
    }

    pub fn u_eps(&self) -> Truncated {
        Truncated { bubble: self.u_eps_full(), r: self.r }
    }
}

/// `U` of the extremal family, built from the closed form.
#[allow(non_snake_case)]
pub fn eval_U(spec: &BubbleSpec, p: &GroupPoint) -> f64 {
    spec.c * d_of(p).powf(-spec.params.q_minus_2s() / 4.0)
}

pub fn eval_u_bar(spec: &BubbleSpec, p: &GroupPoint) -> f64 {
    eval_U(spec, p) / spec.kappa
}

pub fn eval_u_star(spec: &BubbleSpec, p: &GroupPoint) -> f64 {
    eval_u_bar(spec, &dilate_unchecked(1.0 / spec.sigma, p))
}

/// `U_ε` through the chain `U → ū → u* → U_ε`.
#[allow(non_snake_case)]
pub fn eval_U_eps(spec: &BubbleSpec, p: &GroupPoint) -> f64 {
    let w = spec.eps.powf(-spec.params.q_minus_2s() / 2.0);
    w * eval_u_star(spec, &dilate_unchecked(1.0 / spec.eps, p))
}

pub fn eval_u_eps(spec: &BubbleSpec, p: &GroupPoint) -> f64 {
    let phi = eval_cutoff(spec.r, p);
    if phi == 0.0 {
        return 0.0;
    }
    eval_U_eps(spec, p) * phi
}

fn d_of(p: &GroupPoint) -> f64 {
    let a = 1.0 + p.horizontal_sq();
    p.t * p.t + a * a
}

fn bump(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Smooth step: `1` on `(−∞, 0]`, `0` on `[1, ∞)`, `f(1−x)/(f(1−x)+f(x))`
/// in between with `f(x) = e^{−1/x}`.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let a = bump(1.0 - x);
    let b = bump(x);
    a / (a + b)
}

fn smooth_step_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let a = bump(1.0 - x);
    let b = bump(x);
    let da = a / ((1.0 - x) * (1.0 - x));
    let db = b / (x * x);
    -(da * b + a * db) / ((a + b) * (a + b))
}

/// Cutoff `φ(p) = ψ((|p| − r)/r)`.
pub fn eval_cutoff(r: f64, p: &GroupPoint) -> f64 {
    smooth_step((hnorm(p) - r) / r)
}

/// Horizontal gradient `(X_1 f, …, X_N f, Y_1 f, …, Y_N f)` of a function of
/// `(|z|², t)` given its two partial derivatives.
fn horizontal_from_partials(p: &GroupPoint, d_hsq: f64, d_t: f64) -> Vec<f64> {
    // X_j = ∂x_j + 2y_j∂t, Y_j = ∂y_j − 2x_j∂t, and ∂x_j |z|² = 2x_j
    let n = p.dim();
    let mut g = vec![0.0; 2 * n];
    for j in 0..n {
        g[j] = 2.0 * p.x[j] * d_hsq + 2.0 * p.y[j] * d_t;
        g[n + j] = 2.0 * p.y[j] * d_hsq - 2.0 * p.x[j] * d_t;
    }
    g
}

fn extremal_gradient(field: &Extremal, p: &GroupPoint) -> Vec<f64> {
    let l = 1.0 / field.inv_scale;
    let q = dilate_unchecked(field.inv_scale, p);
    let hsq = q.horizontal_sq();
    let d = q.t * q.t + (1.0 + hsq) * (1.0 + hsq);
    // ∂U/∂|z|² = −a·C·D^{−a−1}·2(1+|z|²), ∂U/∂t = −a·C·D^{−a−1}·2t
    let common = -field.a * field.c * d.powf(-field.a - 1.0);
    let g = horizontal_from_partials(&q, common * 2.0 * (1.0 + hsq), common * 2.0 * q.t);
    // horizontal fields are 1-homogeneous: X(f∘δ_{1/L}) = (Xf)∘δ_{1/L} / L
    g.into_iter().map(|v| field.amplitude * v / l).collect()
}

#[allow(non_snake_case)]
pub fn horizontal_gradient_U_eps(spec: &BubbleSpec, p: &GroupPoint) -> Vec<f64> {
    extremal_gradient(&spec.u_eps_full(), p)
}

/// `∇_ℍ u_ε = φ∇_ℍU_ε + U_ε∇_ℍφ`.
pub fn horizontal_gradient_u_eps(spec: &BubbleSpec, p: &GroupPoint) -> Vec<f64> {
    let full = spec.u_eps_full();
    let rho = hnorm(p);
    let x = (rho - spec.r) / spec.r;
    let phi = smooth_step(x);
    let mut g = extremal_gradient(&full, p);
    g.iter_mut().for_each(|v| *v *= phi);
    let dpsi = smooth_step_deriv(x);
    if dpsi != 0.0 {
        let u = full.eval(p);
        // ∂|p|/∂|z|² = |z|²/(2|p|³), ∂|p|/∂t = t/(2|p|³)
        let r3 = rho * rho * rho;
        let hsq = p.horizontal_sq();
        let gn = horizontal_from_partials(p, hsq / (2.0 * r3), p.t / (2.0 * r3));
        for (gi, ni) in g.iter_mut().zip(gn) {
            *gi += u * dpsi / spec.r * ni;
        }
    }
    g
}

/// `A·C·D(δ_{1/L}ξ)^{−(Q−2s)/4}`: the extremal with amplitude `A` and width `L`.
#[derive(Debug, Clone)]
pub struct Extremal {
    n: usize,
    a: f64,
    c: f64,
    amplitude: f64,
    inv_scale: f64,
}

impl Extremal {
    pub fn new(params: GroupParams, c: f64, amplitude: f64, scale: f64) -> Self {
        Self {
            n: params.n,
            a: params.q_minus_2s() / 4.0,
            c,
            amplitude,
            inv_scale: 1.0 / scale,
        }
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.inv_scale
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl ScalarField for Extremal {
    fn eval(&self, p: &GroupPoint) -> f64 {
        let k2 = self.inv_scale * self.inv_scale;
        let a = 1.0 + p.horizontal_sq() * k2;
        let t = p.t * k2;
        self.amplitude * self.c * (t * t + a * a).powf(-self.a)
    }

    fn label(&self) -> String {
        format!("extremal(amp={:e}, width={:e})", self.amplitude, self.scale())
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn support_radius(&self) -> Option<f64> {
        None
    }

    fn bound_outside(&self, radius: f64) -> f64 {
        // D ≥ max(1, |δ_{1/L}ξ|⁴)
        let z = (radius * self.inv_scale).max(1.0);
        self.amplitude * self.c * z.powf(-4.0 * self.a)
    }

    fn scales(&self) -> Vec<f64> {
        vec![self.scale()]
    }
}

/// `u_ε = U_ε·φ`.
#[derive(Debug, Clone)]
pub struct Truncated {
    pub bubble: Extremal,
    pub r: f64,
}

impl ScalarField for Truncated {
    fn eval(&self, p: &GroupPoint) -> f64 {
        let phi = eval_cutoff(self.r, p);
        if phi == 0.0 {
            0.0
        } else {
            self.bubble.eval(p) * phi
        }
    }

    fn label(&self) -> String {
        format!("truncated(width={:e}, r={})", self.bubble.scale(), self.r)
    }

    fn dim(&self) -> usize {
        self.bubble.n
    }

    fn support_radius(&self) -> Option<f64> {
        Some(2.0 * self.r)
    }

    fn bound_outside(&self, radius: f64) -> f64 {
        if radius >= 2.0 * self.r {
            0.0
        } else {
            self.bubble.bound_outside(radius)
        }
    }

    fn scales(&self) -> Vec<f64> {
        vec![self.bubble.scale().min(self.r), self.r]
    }
}

/// Critical rescaling `u_λ(ξ) = λ^{(Q−2s)/2} u(δ_λ ξ)`.
#[derive(Clone)]
pub struct CriticalRescale {
    pub inner: Arc<dyn ScalarField>,
    pub lambda: f64,
    weight: f64,
}

impl CriticalRescale {
    pub fn new(inner: Arc<dyn ScalarField>, lambda: f64, params: GroupParams) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("rescaling factor must be positive, got {lambda}")));
        }
        let weight = lambda.powf(params.q_minus_2s() / 2.0);
        Ok(Self { inner, lambda, weight })
    }
}

impl ScalarField for CriticalRescale {
    fn eval(&self, p: &GroupPoint) -> f64 {
        self.weight * self.inner.eval(&dilate_unchecked(self.lambda, p))
    }

    fn label(&self) -> String {
        format!("rescale({}, {})", self.inner.label(), self.lambda)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn support_radius(&self) -> Option<f64> {
        self.inner.support_radius().map(|r| r / self.lambda)
    }

    fn bound_outside(&self, radius: f64) -> f64 {
        self.weight * self.inner.bound_outside(radius * self.lambda)
    }

    fn scales(&self) -> Vec<f64> {
        self.inner.scales().into_iter().map(|s| s / self.lambda).collect()
    }
}

/// `c·u`.
#[derive(Clone)]
pub struct Scaled {
    pub inner: Arc<dyn ScalarField>,
    pub factor: f64,
}

impl ScalarField for Scaled {
    fn eval(&self, p: &GroupPoint) -> f64 {
        self.factor * self.inner.eval(p)
    }

    fn label(&self) -> String {
        format!("{}*{}", self.factor, self.inner.label())
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn support_radius(&self) -> Option<f64> {
        self.inner.support_radius()
    }

    fn bound_outside(&self, radius: f64) -> f64 {
        self.factor.abs() * self.inner.bound_outside(radius)
    }

    fn scales(&self) -> Vec<f64> {
        self.inner.scales()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Zero {
    pub n: usize,
}

impl ScalarField for Zero {
    fn eval(&self, _: &GroupPoint) -> f64 {
        0.0
    }
    fn label(&self) -> String {
        "zero".into()
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn support_radius(&self) -> Option<f64> {
        Some(0.0)
    }
    fn bound_outside(&self, _: f64) -> f64 {
        0.0
    }
    fn scales(&self) -> Vec<f64> {
        vec![1.0]
    }
}

/// Empirical sup of a ratio over random points with `ρ < |p| < 2r`, split
/// into two independent halves so a spread can be reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupReport {
    pub value: f64,
    pub spread: f64,
    pub samples: u64,
}

fn shell_point<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> GroupPoint {
    // log-uniform radius concentrates samples near the inner edge where sups sit
    let rad = lo * (hi / lo).powf(rng.random::<f64>());
    dilate_unchecked(rad, &sphere_direction(n, rng))
}

fn shell_sup<F>(spec: &BubbleSpec, rho: f64, samples: usize, seed: u64, stream: u64, f: F) -> Result<SupReport>
where
    F: Fn(&GroupPoint) -> f64 + Sync,
{
    if !(rho > 0.0 && rho < 2.0 * spec.r) {
        return Err(Error::invalid(format!("shell radius must lie in (0, 2r), got {rho}")));
    }
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let n = spec.params.n;
    let half = samples / 2;
    let parts = map_chunks(samples, 4096, |k, len| {
        let mut rng = chunk_rng(seed, stream, k);
        let mut m = [0.0f64; 2];
        for i in 0..len {
            let p = shell_point(n, rho, 2.0 * spec.r, &mut rng);
            let v = f(&p);
            let idx = usize::from(k as usize * 4096 + i >= half);
            m[idx] = m[idx].max(v);
        }
        m
    });
    let m = parts.into_iter().fold([0.0f64; 2], |a, b| [a[0].max(b[0]), a[1].max(b[1])]);
    let value = m[0].max(m[1]);
    Ok(SupReport {
        value,
        spread: (m[0] - m[1]).abs().max(value * 1e-12),
        samples: samples as u64,
    })
}

/// `sup_{|p|>ρ} u_ε(p)/ε^{(Q−2s)/2}` over random points.
pub fn sup_ratio(spec: &BubbleSpec, rho: f64, samples: usize, seed: u64) -> Result<SupReport> {
    let w = spec.eps.powf(spec.params.q_minus_2s() / 2.0);
    shell_sup(spec, rho, samples, seed, STREAM_SUP, |p| eval_u_eps(spec, p).abs() / w)
}

/// `sup_{|p|>ρ} |∇_ℍ u_ε(p)|/ε^{(Q−2s)/2}` over random points.
pub fn gradient_sup_ratio(spec: &BubbleSpec, rho: f64, samples: usize, seed: u64) -> Result<SupReport> {
    let w = spec.eps.powf(spec.params.q_minus_2s() / 2.0);
    shell_sup(spec, rho, samples, seed, STREAM_SUP + 100, |p| {
        horizontal_gradient_u_eps(spec, p).iter().map(|v| v * v).sum::<f64>().sqrt() / w
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    pub eps: f64,
    /// `sup |u_ε(ξ)−u_ε(η)| / (ε^{(Q−2s)/2} min{1, |η⁻¹∘ξ|})` over the sampled pairs.
    pub constant: f64,
    pub spread: f64,
    pub pairs: u64,
    /// Largest numerator seen over pairs with both points outside `B_{2r}`.
    pub max_outer_numerator: f64,
}

/// Empirical increment constant over pairs with both points outside `B_r`.
///
/// Half the pairs are independent points of the shell `r < |·| < 3r`; the
/// other half are short hops `η = ξ∘ζ` with `|ζ|` log-uniform in `[10⁻³, 1]`
/// that probe the Lipschitz regime.
pub fn increment_bound_check(spec: &BubbleSpec, samples: usize, seed: u64) -> Result<IncrementReport> {
    if samples < 2 {
        return Err(Error::invalid("need at least two pairs"));
    }
    let n = spec.params.n;
    let r = spec.r;
    let w = spec.eps.powf(spec.params.q_minus_2s() / 2.0);
    let field = spec.u_eps();
    let half = samples / 2;
    let parts = map_chunks(samples, 4096, |k, len| {
        let mut rng = chunk_rng(seed, STREAM_INCREMENT, k);
        let mut m = [0.0f64; 2];
        let mut outer = 0.0f64;
        for i in 0..len {
            let idx = k as usize * 4096 + i;
            let (xi, eta) = loop {
                let xi = shell_point(n, r, 3.0 * r, &mut rng);
                let eta = if idx.is_multiple_of(2) {
                    shell_point(n, r, 3.0 * r, &mut rng)
                } else {
                    let hop = 1e-3 * (1e3f64).powf(rng.random::<f64>());
                    let zeta = dilate_unchecked(hop, &sphere_direction(n, &mut rng));
                    crate::hgroup::compose_unchecked(&xi, &zeta)
                };
                if hnorm(&eta) > r && hdist_unchecked(&xi, &eta) > 0.0 {
                    break (xi, eta);
                }
            };
            let num = (field.eval(&xi) - field.eval(&eta)).abs();
            if hnorm(&xi) >= 2.0 * r && hnorm(&eta) >= 2.0 * r {
                outer = outer.max(num);
            }
            let ratio = num / (w * hdist_unchecked(&xi, &eta).min(1.0));
            let h = usize::from(idx >= half);
            m[h] = m[h].max(ratio);
        }
        (m, outer)
    });
    let (m, outer) = parts.into_iter().fold(([0.0f64; 2], 0.0f64), |a, b| {
        ([a.0[0].max(b.0[0]), a.0[1].max(b.0[1])], a.1.max(b.1))
    });
    let constant = m[0].max(m[1]);
    Ok(IncrementReport {
        eps: spec.eps,
        constant,
        spread: (m[0] - m[1]).abs().max(constant * 1e-12),
        pairs: samples as u64,
        max_outer_numerator: outer,
    })
}

/// Random point of the ball `B_R`, used by tests and the Python bindings.
pub fn random_ball_point(n: usize, radius: f64, seed: u64, index: u64) -> GroupPoint {
    let mut rng = chunk_rng(seed, crate::rng::STREAM_TEST_FIELDS, index);
    dilate_unchecked(radius, &unit_ball_point(n, &mut rng))
}
