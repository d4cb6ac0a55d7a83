//! Stratified estimator for double integrals against `|η⁻¹∘ξ|^{−(Q+2s)}`.
//!
//! The integrand is symmetric in `(ξ, η)`, so the double integral equals twice
//! the integral over pairs with `|η| > |ξ|`. The inner point `ξ` is drawn from
//! a radial importance proposal; for each `ξ` the offset `ζ = ξ⁻¹∘η` is drawn
//! once per geometric annulus of `|ζ|` from the density `∝ ρ^{−1−2s}`, so each
//! annulus contributes its exact kernel mass times one integrand value. The
//! disc inside the innermost annulus is sampled with density `∝ ρ^{1−2s}`,
//! which cancels the `ρ²` vanishing of the integrand. Beyond the outermost
//! annulus every `η` is far away, and the far field is added in closed form
//! with a bound on the neglected part folded into the standard error.

use rand::Rng;

use crate::bubble::ScalarField;
use crate::error::{Error, Result};
use crate::hgroup::{compose_unchecked, dilate_unchecked, hnorm, GroupParams, GroupPoint};
use crate::quad::sampling::{
    geometric_edges, kernel_mass, kernel_radius, sphere_constant, sphere_direction, RadialProposal,
};
use crate::quad::{require_monte_carlo, Estimate, QuadratureSpec, Region};
use crate::rng::{chunk_rng, map_chunks, pairwise_reduce, STREAM_SEMINORM};

const XI_PER_CHUNK: usize = 256;
/// Outer truncation radius as a multiple of the largest relevant scale.
const FAR_FACTOR: f64 = 64.0;

/// Seminorm estimate with its per-stratum decomposition.
///
/// `strata[0]` is the inner disc, `strata[1..=K]` the annuli from the inside
/// out, `strata[K+1]` the outer shell and `strata[K+2]` the closed-form far
/// field; they sum to the total.
#[derive(Debug, Clone, PartialEq)]
pub struct GagliardoEstimate {
    pub estimate: Estimate,
    pub strata: Vec<f64>,
    pub bias_bound: f64,
}

/// Annuli span `[lo, hi]`, one outer stratum spans `[hi, far]`, and the
/// field beyond `far` is summed in closed form.
struct Range {
    lo: f64,
    hi: f64,
    far: f64,
    disc: bool,
}

impl Range {
    fn around(lo: f64, hi: f64, far: f64, disc: bool) -> Range {
        let hi = hi.min(far);
        Range { lo: lo.min(hi * 0.5), hi, far, disc }
    }
}

trait PairIntegrand: Sync {
    type Cache: Copy;
    fn at(&self, xi: &GroupPoint) -> Self::Cache;
    fn value(&self, c: Self::Cache, eta: &GroupPoint) -> f64;
    /// Far-field coefficient and bias-bound coefficient multiplying `∫_hi^∞ ρ^{−1−2s}`.
    fn tail(&self, c: Self::Cache, xi_norm: f64, hi: f64) -> (f64, f64);
    fn range(&self, xi_norm: f64, annuli: usize) -> Range;
}

struct Squared<'a> {
    u: &'a dyn ScalarField,
    core: f64,
    reach: f64,
}

impl PairIntegrand for Squared<'_> {
    type Cache = f64;

    fn at(&self, xi: &GroupPoint) -> f64 {
        self.u.eval(xi)
    }

    fn value(&self, a: f64, eta: &GroupPoint) -> f64 {
        let d = a - self.u.eval(eta);
        d * d
    }

    fn tail(&self, a: f64, xi_norm: f64, hi: f64) -> (f64, f64) {
        let m = self.u.bound_outside(hi - xi_norm);
        (a * a, 2.0 * a.abs() * m + m * m)
    }

    fn range(&self, xi_norm: f64, annuli: usize) -> Range {
        let far = match self.u.support_radius() {
            Some(sr) => (2.0 * xi_norm).max(xi_norm + sr) * (1.0 + 1e-9),
            None => FAR_FACTOR * xi_norm.max(self.reach),
        };
        let local = xi_norm.max(self.core);
        let half = 2f64.powf(annuli as f64 / 2.0);
        Range::around(local / half, local * half, far, true)
    }
}

/// `(a(ξ)−a(η))² − (b(ξ)−b(η))²` for fields that agree on `B_agree`.
struct Difference<'a> {
    a: &'a dyn ScalarField,
    b: &'a dyn ScalarField,
    agree: f64,
    reach: f64,
}

impl PairIntegrand for Difference<'_> {
    type Cache = (f64, f64);

    fn at(&self, xi: &GroupPoint) -> (f64, f64) {
        (self.a.eval(xi), self.b.eval(xi))
    }

    fn value(&self, (a, b): (f64, f64), eta: &GroupPoint) -> f64 {
        if hnorm(eta) <= self.agree {
            // both points lie where the fields coincide
            return 0.0;
        }
        let da = a - self.a.eval(eta);
        let db = b - self.b.eval(eta);
        da * da - db * db
    }

    fn tail(&self, (a, b): (f64, f64), xi_norm: f64, hi: f64) -> (f64, f64) {
        let ma = self.a.bound_outside(hi - xi_norm);
        let mb = self.b.bound_outside(hi - xi_norm);
        (a * a - b * b, 2.0 * a.abs() * ma + ma * ma + 2.0 * b.abs() * mb + mb * mb)
    }

    fn range(&self, xi_norm: f64, annuli: usize) -> Range {
        let far = FAR_FACTOR * xi_norm.max(self.reach);
        let span = 2f64.powi(annuli as i32);
        if xi_norm < self.agree {
            // |η| ≤ agree contributes nothing, and |ζ| < agree − |ξ| cannot leave B_agree
            let lo = self.agree - xi_norm;
            Range::around(lo, lo * span, far, false)
        } else {
            let half = span.sqrt();
            Range::around(xi_norm / half, xi_norm * half, far, true)
        }
    }
}

#[derive(Clone)]
struct Partial {
    n: u64,
    sum: f64,
    sum_sq: f64,
    strata: Vec<f64>,
    bias: f64,
}

impl Partial {
    fn zero(k: usize) -> Self {
        Self { n: 0, sum: 0.0, sum_sq: 0.0, strata: vec![0.0; k + 3], bias: 0.0 }
    }

    fn merge(mut self, o: Partial) -> Partial {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.bias += o.bias;
        for (a, b) in self.strata.iter_mut().zip(o.strata) {
            *a += b;
        }
        self
    }
}

fn estimation_error(reason: &str, xi: &GroupPoint, eta: &GroupPoint) -> Error {
    Error::Estimation {
        reason: reason.to_string(),
        pair: Some(Box::new((xi.clone(), eta.clone()))),
    }
}

fn run<I: PairIntegrand>(
    integrand: &I,
    proposal: &RadialProposal,
    gp: &GroupParams,
    qs: &QuadratureSpec,
    stream: u64,
) -> Result<GagliardoEstimate> {
    require_monte_carlo(qs, "the Gagliardo seminorm")?;
    qs.validate()?;
    let n = gp.n;
    let s = gp.s;
    let k = qs.annuli;
    let c = sphere_constant(n);
    let n_xi = (qs.samples as usize / (k + 2)).max(2);

    let parts = map_chunks(n_xi, XI_PER_CHUNK, |chunk, len| -> Result<Partial> {
        let mut rng = chunk_rng(qs.seed, stream, chunk);
        let mut acc = Partial::zero(k);
        let mut slot = vec![0.0; k + 3];
        for _ in 0..len {
            let (xi, xn) = proposal.sample(&mut rng);
            let density = proposal.density(xn);
            slot.iter_mut().for_each(|v| *v = 0.0);
            let mut bias = 0.0;
            let inside = match qs.region {
                Region::FullSpace => true,
                Region::Ball { radius } | Region::Domain { radius } => xn < radius,
            };
            if inside {
                let a = integrand.at(&xi);
                let mut range = integrand.range(xn, k);
                let mut closed_tail = true;
                if let Region::Ball { radius } = qs.region {
                    // both points in B_R forces |ζ| < |ξ| + R
                    range = Range::around(range.lo, range.hi, range.far.min(xn + radius), range.disc);
                    closed_tail = false;
                }
                let eval = |rho: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Result<Option<f64>> {
                    let dir = sphere_direction(n, rng);
                    let eta = compose_unchecked(&xi, &dilate_unchecked(rho, &dir));
                    let en = hnorm(&eta);
                    if en <= xn {
                        return Ok(None);
                    }
                    if let Region::Ball { radius } = qs.region {
                        if en >= radius {
                            return Ok(None);
                        }
                    }
                    let v = integrand.value(a, &eta);
                    if !v.is_finite() {
                        return Err(estimation_error("non-finite integrand", &xi, &eta));
                    }
                    Ok(Some(v))
                };
                if range.disc {
                    let rho = range.lo * rng.random::<f64>().powf(1.0 / (2.0 - 2.0 * s));
                    if rho > 0.0 {
                        if let Some(v) = eval(rho, &mut rng)? {
                            let w = c * range.lo.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s) / (rho * rho);
                            slot[0] = 2.0 * w * v;
                        }
                    }
                }
                let edges = geometric_edges(range.lo, range.hi, k);
                for j in 0..k {
                    let rho = kernel_radius(edges[j], edges[j + 1], s, rng.random());
                    if let Some(v) = eval(rho, &mut rng)? {
                        slot[j + 1] = 2.0 * c * kernel_mass(edges[j], edges[j + 1], s) * v;
                    }
                }
                if range.far > range.hi {
                    let rho = kernel_radius(range.hi, range.far, s, rng.random());
                    if let Some(v) = eval(rho, &mut rng)? {
                        slot[k + 1] = 2.0 * c * kernel_mass(range.hi, range.far, s) * v;
                    }
                }
                if closed_tail {
                    let mass = 2.0 * c * kernel_mass(range.far, f64::INFINITY, s);
                    let (coef, bcoef) = integrand.tail(a, xn, range.far);
                    slot[k + 2] = mass * coef;
                    bias = mass * bcoef;
                }
            }
            let mut f = 0.0;
            for (acc_slot, v) in acc.strata.iter_mut().zip(&slot) {
                let w = v / density;
                *acc_slot += w;
                f += w;
            }
            if !f.is_finite() {
                return Err(Error::Estimation {
                    reason: format!("non-finite weighted sample at |xi| = {xn:e}"),
                    pair: Some(Box::new((xi.clone(), xi.clone()))),
                });
            }
            acc.n += 1;
            acc.sum += f;
            acc.sum_sq += f * f;
            acc.bias += bias / density;
        }
        Ok(acc)
    });
    let parts: Vec<Partial> = parts.into_iter().collect::<Result<_>>()?;
    let total = pairwise_reduce(parts, Partial::merge).unwrap_or_else(|| Partial::zero(k));
    let m = total.n as f64;
    let mean = total.sum / m;
    let var = ((total.sum_sq - total.sum * mean) / (m - 1.0)).max(0.0) / m;
    let bias_bound = (total.bias / m).abs();
    Ok(GagliardoEstimate {
        estimate: Estimate {
            value: mean,
            stderr: var.sqrt() + bias_bound,
            samples_used: total.n * (k as u64 + 2),
        },
        strata: total.strata.iter().map(|v| v / m).collect(),
        bias_bound,
    })
}

fn field_proposal(u: &dyn ScalarField) -> (RadialProposal, f64, f64) {
    let mut scales = u.scales();
    scales.retain(|s| s.is_finite() && *s > 0.0);
    if scales.is_empty() {
        scales.push(1.0);
    }
    let reach = scales.iter().cloned().fold(0.0, f64::max);
    let core = scales.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut comps: Vec<(f64, f64)> = scales.iter().map(|&s| (1.0, s)).collect();
    if u.support_radius().is_none() {
        // a broader component keeps the weights of far inner points moderate
        comps.push((0.25, 8.0 * reach));
    }
    (RadialProposal::new(u.dim(), &comps, 0.0), core, reach)
}

fn check_dim(u: &dyn ScalarField, gp: &GroupParams) -> Result<()> {
    if u.dim() != gp.n {
        return Err(Error::invalid(format!("field has N = {}, parameters have N = {}", u.dim(), gp.n)));
    }
    Ok(())
}

/// `[u]² = ∬ |u(ξ)−u(η)|² |η⁻¹∘ξ|^{−(Q+2s)} dξ dη` over the quadrature region.
pub fn gagliardo_sq(u: &dyn ScalarField, gp: &GroupParams, qs: &QuadratureSpec) -> Result<Estimate> {
    Ok(gagliardo_sq_detailed(u, gp, qs)?.estimate)
}

pub fn gagliardo_sq_detailed(
    u: &dyn ScalarField,
    gp: &GroupParams,
    qs: &QuadratureSpec,
) -> Result<GagliardoEstimate> {
    check_dim(u, gp)?;
    if u.support_radius() == Some(0.0) {
        require_monte_carlo(qs, "the Gagliardo seminorm")?;
        return Ok(GagliardoEstimate {
            estimate: Estimate::exact(0.0),
            strata: vec![0.0; qs.annuli + 3],
            bias_bound: 0.0,
        });
    }
    let (proposal, core, reach) = field_proposal(u);
    run(&Squared { u, core, reach }, &proposal, gp, qs, STREAM_SEMINORM)
}

/// `[a]² − [b]²` for fields that coincide on `B_agree`, estimated directly from
/// the pointwise difference of the two integrands.
pub fn gagliardo_sq_difference(
    a: &dyn ScalarField,
    b: &dyn ScalarField,
    agree: f64,
    gp: &GroupParams,
    qs: &QuadratureSpec,
) -> Result<GagliardoEstimate> {
    check_dim(a, gp)?;
    check_dim(b, gp)?;
    if !(agree > 0.0) {
        return Err(Error::invalid("agreement radius must be positive"));
    }
    if qs.region != Region::FullSpace {
        return Err(Error::invalid("the difference estimator integrates over the full space"));
    }
    let (proposal, reach) = {
        let mut scales = a.scales();
        scales.extend(b.scales());
        let core = scales.iter().cloned().fold(f64::INFINITY, f64::min);
        let comps = [(0.25, core), (0.5, agree), (0.25, 4.0 * agree)];
        (RadialProposal::new(gp.n, &comps, 0.0), agree.max(scales.iter().cloned().fold(0.0, f64::max)))
    };
    run(&Difference { a, b, agree, reach }, &proposal, gp, qs, STREAM_SEMINORM)
}
