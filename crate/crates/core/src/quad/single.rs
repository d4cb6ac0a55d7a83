//! Single integrals: `L^p` norms, quotients built from them, and ball volumes.

use rand::Rng;

use crate::bubble::ScalarField;
use crate::error::{Error, Result};
use crate::hgroup::{hdist_unchecked, hnorm, GroupParams, GroupPoint};
use crate::quad::sampling::RadialProposal;
use crate::quad::{gagliardo_sq, Estimate, Method, QuadratureSpec, Region};
use crate::rng::{chunk_rng, map_chunks, pairwise_reduce, STREAM_CRITICAL, STREAM_L2, STREAM_VOLUME};

const PER_CHUNK: usize = 4096;

#[derive(Clone, Copy)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    fn estimate(self) -> Estimate {
        let m = self.n as f64;
        let mean = self.sum / m;
        let var = ((self.sum_sq - self.sum * mean) / (m - 1.0)).max(0.0) / m;
        Estimate { value: mean, stderr: var.sqrt(), samples_used: self.n }
    }
}

fn in_region(region: &Region, p_norm: f64) -> bool {
    match region.radius() {
        None => true,
        Some(r) => p_norm < r,
    }
}

/// Importance-sampled `∫ f` over the region with the given proposal.
fn mc_integral<F>(
    f: F,
    proposal: &RadialProposal,
    qs: &QuadratureSpec,
    stream: u64,
) -> Result<Estimate>
where
    F: Fn(&GroupPoint) -> f64 + Sync,
{
    let n = (qs.samples as usize).max(2);
    let parts = map_chunks(n, PER_CHUNK, |k, len| -> Result<Moments> {
        let mut rng = chunk_rng(qs.seed, stream, k);
        let mut m = Moments { n: 0, sum: 0.0, sum_sq: 0.0 };
        for _ in 0..len {
            let (p, r) = proposal.sample(&mut rng);
            let v = if in_region(&qs.region, r) { f(&p) / proposal.density(r) } else { 0.0 };
            if !v.is_finite() {
                return Err(Error::Estimation {
                    reason: "non-finite integrand".into(),
                    pair: Some(Box::new((p.clone(), p))),
                });
            }
            m.n += 1;
            m.sum += v;
            m.sum_sq += v * v;
        }
        Ok(m)
    });
    let parts: Vec<Moments> = parts.into_iter().collect::<Result<_>>()?;
    Ok(pairwise_reduce(parts, Moments::merge).expect("at least one chunk").estimate())
}

/// Midpoint rule on the box `|x_j|, |y_j| ≤ B`, `|t| ≤ B²`, with an error
/// estimate from the same rule at half the resolution.
fn grid_integral<F>(f: F, n: usize, half_width: f64, budget: u64) -> Estimate
where
    F: Fn(&GroupPoint) -> f64 + Sync,
{
    let dim = 2 * n + 1;
    let m = ((budget as f64).powf(1.0 / dim as f64).floor() as usize).max(4);
    let fine = grid_rule(&f, n, half_width, m);
    let coarse = grid_rule(&f, n, half_width, m / 2);
    Estimate {
        value: fine,
        stderr: (fine - coarse).abs(),
        samples_used: (m.pow(dim as u32) + (m / 2).pow(dim as u32)) as u64,
    }
}

fn grid_rule<F>(f: &F, n: usize, b: f64, m: usize) -> f64
where
    F: Fn(&GroupPoint) -> f64 + Sync,
{
    let dim = 2 * n + 1;
    let total = m.pow(dim as u32);
    let hz = 2.0 * b / m as f64;
    let ht = 2.0 * b * b / m as f64;
    let cell = hz.powi(2 * n as i32) * ht;
    let parts = map_chunks(total, PER_CHUNK, |k, len| {
        let mut p = GroupPoint::origin(n);
        let mut acc = 0.0;
        for i in 0..len {
            let mut idx = k as usize * PER_CHUNK + i;
            for j in 0..2 * n {
                let c = -b + (idx % m) as f64 * hz + 0.5 * hz;
                idx /= m;
                if j < n {
                    p.x[j] = c;
                } else {
                    p.y[j - n] = c;
                }
            }
            p.t = -b * b + (idx % m) as f64 * ht + 0.5 * ht;
            acc += f(&p);
        }
        acc
    });
    pairwise_reduce(parts, |a, b| a + b).unwrap_or(0.0) * cell
}

fn field_proposal(u: &dyn ScalarField) -> RadialProposal {
    let mut scales: Vec<f64> = u.scales().into_iter().filter(|s| *s > 0.0 && s.is_finite()).collect();
    if scales.is_empty() {
        scales.push(1.0);
    }
    let comps: Vec<(f64, f64)> = scales.iter().map(|&s| (1.0, s)).collect();
    RadialProposal::new(u.dim(), &comps, 0.0)
}

fn check(u: &dyn ScalarField, p: f64, gp: &GroupParams) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("exponent p must be at least 1, got {p}")));
    }
    if u.dim() != gp.n {
        return Err(Error::invalid(format!("field has N = {}, parameters have N = {}", u.dim(), gp.n)));
    }
    Ok(())
}

fn lp_integral_stream(
    u: &dyn ScalarField,
    p: f64,
    gp: &GroupParams,
    qs: &QuadratureSpec,
    stream: u64,
) -> Result<Estimate> {
    check(u, p, gp)?;
    qs.validate()?;
    if u.support_radius() == Some(0.0) {
        return Ok(Estimate::exact(0.0));
    }
    let f = |q: &GroupPoint| u.eval(q).abs().powf(p);
    match qs.method {
        Method::MonteCarloStratified => mc_integral(f, &field_proposal(u), qs, stream),
        Method::TensorGrid => {
            let b = match (qs.region.radius(), u.support_radius()) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    return Err(Error::invalid("tensor grids need a bounded region or a compactly supported field"))
                }
            };
            let region = qs.region;
            Ok(grid_integral(|q| if in_region(&region, hnorm(q)) { f(q) } else { 0.0 }, gp.n, b, qs.samples))
        }
    }
}

/// `∫ |u|^p` over the quadrature region.
pub fn lp_integral(u: &dyn ScalarField, p: f64, gp: &GroupParams, qs: &QuadratureSpec) -> Result<Estimate> {
    let stream = if (p - 2.0).abs() < 1e-15 { STREAM_L2 } else { STREAM_CRITICAL };
    lp_integral_stream(u, p, gp, qs, stream)
}

/// `‖u‖_{L^p}` over the quadrature region.
pub fn lp_norm(u: &dyn ScalarField, p: f64, gp: &GroupParams, qs: &QuadratureSpec) -> Result<Estimate> {
    Ok(lp_integral(u, p, gp, qs)?.powf(1.0 / p))
}

/// `∫ (|a|^p − |b|^p)` for fields that coincide on `B_agree`, sampling only
/// the complement of `B_agree`.
pub fn lp_integral_difference(
    a: &dyn ScalarField,
    b: &dyn ScalarField,
    p: f64,
    agree: f64,
    gp: &GroupParams,
    qs: &QuadratureSpec,
) -> Result<Estimate> {
    check(a, p, gp)?;
    check(b, p, gp)?;
    qs.validate()?;
    crate::quad::require_monte_carlo(qs, "the difference estimator")?;
    let proposal = RadialProposal::new(gp.n, &[(0.6, agree), (0.4, 4.0 * agree)], agree);
    mc_integral(
        |q| a.eval(q).abs().powf(p) - b.eval(q).abs().powf(p),
        &proposal,
        qs,
        STREAM_CRITICAL + 10,
    )
}

/// Numerator, denominator and quotient of `([u]² − λ‖u‖₂²)/‖u‖²_{Q*}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotientParts {
    pub seminorm: Estimate,
    pub l2: Estimate,
    pub critical: Estimate,
    pub quotient: Estimate,
}

pub fn s_lambda_quotient_parts(
    u: &dyn ScalarField,
    lambda: f64,
    gp: &GroupParams,
    qs: &QuadratureSpec,
) -> Result<QuotientParts> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let critical = lp_integral_stream(u, gp.q_star, gp, qs, STREAM_CRITICAL)?;
    if !(critical.value > 3.0 * critical.stderr) || critical.value <= 0.0 {
        return Err(Error::DegenerateDenominator { value: critical.value, stderr: critical.stderr });
    }
    let seminorm = gagliardo_sq(u, gp, qs)?;
    let l2 = if lambda > 0.0 {
        lp_integral_stream(u, 2.0, gp, qs, STREAM_L2)?
    } else {
        Estimate::exact(0.0)
    };
    let num = seminorm.value - lambda * l2.value;
    let num_err = seminorm.stderr.hypot(lambda * l2.stderr);
    let den = critical.value.powf(2.0 / gp.q_star);
    let q = num / den;
    let rel_den = 2.0 / gp.q_star * critical.stderr / critical.value;
    let stderr = (num_err / den).hypot(q * rel_den);
    Ok(QuotientParts {
        seminorm,
        l2,
        critical,
        quotient: Estimate {
            value: q,
            stderr,
            samples_used: seminorm.samples_used + l2.samples_used + critical.samples_used,
        },
    })
}

pub fn s_lambda_quotient(
    u: &dyn ScalarField,
    lambda: f64,
    gp: &GroupParams,
    qs: &QuadratureSpec,
) -> Result<Estimate> {
    Ok(s_lambda_quotient_parts(u, lambda, gp, qs)?.quotient)
}

/// `[u]²/‖u‖²_{L^{Q*}}`.
pub fn sobolev_quotient(u: &dyn ScalarField, gp: &GroupParams, qs: &QuadratureSpec) -> Result<Estimate> {
    s_lambda_quotient(u, 0.0, gp, qs)
}

/// Haar volume of the Korányi ball `B_R(0)`.
pub fn ball_volume(radius: f64, gp: &GroupParams, qs: &QuadratureSpec) -> Result<Estimate> {
    ball_volume_at(&GroupPoint::origin(gp.n), radius, gp, qs)
}

/// Haar volume of `g∘B_R = B_R(g)`, sampled in a box that contains it.
pub fn ball_volume_at(
    center: &GroupPoint,
    radius: f64,
    gp: &GroupParams,
    qs: &QuadratureSpec,
) -> Result<Estimate> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    if center.dim() != gp.n {
        return Err(Error::invalid("center dimension does not match N"));
    }
    qs.validate()?;
    let n = gp.n;
    // η = g∘ξ has |t_η − t_g| ≤ R² + 2R(|x_g| + |y_g|)
    let gx = center.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gy = center.y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let th = radius * radius + 2.0 * radius * (gx + gy);
    let box_vol = (2.0 * radius).powi(2 * n as i32) * 2.0 * th;
    let inside = |p: &GroupPoint| hdist_unchecked(p, center) < radius;
    match qs.method {
        Method::MonteCarloStratified => {
            let total = qs.samples as usize;
            let parts = map_chunks(total, PER_CHUNK, |k, len| {
                let mut rng = chunk_rng(qs.seed, STREAM_VOLUME, k);
                let mut p = GroupPoint::origin(n);
                let mut hits = 0u64;
                for _ in 0..len {
                    for j in 0..n {
                        p.x[j] = center.x[j] + radius * (2.0 * rng.random::<f64>() - 1.0);
                        p.y[j] = center.y[j] + radius * (2.0 * rng.random::<f64>() - 1.0);
                    }
                    p.t = center.t + th * (2.0 * rng.random::<f64>() - 1.0);
                    hits += u64::from(inside(&p));
                }
                hits
            });
            let hits: u64 = parts.into_iter().sum();
            let frac = hits as f64 / total as f64;
            Ok(Estimate {
                value: box_vol * frac,
                stderr: box_vol * (frac * (1.0 - frac) / total as f64).sqrt(),
                samples_used: total as u64,
            })
        }
        Method::TensorGrid => {
            let dim = 2 * n + 1;
            let m = ((qs.samples as f64).powf(1.0 / dim as f64).floor() as usize).max(4);
            let count = |m: usize| -> f64 {
                let total = m.pow(dim as u32);
                let hz = 2.0 * radius / m as f64;
                let ht = 2.0 * th / m as f64;
                let parts = map_chunks(total, PER_CHUNK, |k, len| {
                    let mut p = GroupPoint::origin(n);
                    let mut hits = 0u64;
                    for i in 0..len {
                        let mut idx = k as usize * PER_CHUNK + i;
                        for j in 0..2 * n {
                            let c = -radius + ((idx % m) as f64 + 0.5) * hz;
                            idx /= m;
                            if j < n {
                                p.x[j] = center.x[j] + c;
                            } else {
                                p.y[j - n] = center.y[j - n] + c;
                            }
                        }
                        p.t = center.t - th + ((idx % m) as f64 + 0.5) * ht;
                        hits += u64::from(inside(&p));
                    }
                    hits
                });
                box_vol * parts.into_iter().sum::<u64>() as f64 / total as f64
            };
            let fine = count(m);
            let coarse = count(m / 2);
            Ok(Estimate {
                value: fine,
                stderr: (fine - coarse).abs(),
                samples_used: (m.pow(dim as u32) + (m / 2).pow(dim as u32)) as u64,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::Zero;
    use crate::hgroup::critical_exponent;

    #[test]
    fn zero_field_norm_is_zero() {
        let gp = critical_exponent(1, 0.5).unwrap();
        let e = lp_norm(&Zero { n: 1 }, 2.0, &gp, &QuadratureSpec::monte_carlo(1000, 0).unwrap()).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn zero_field_quotient_is_degenerate() {
        let gp = critical_exponent(1, 0.5).unwrap();
        let r = sobolev_quotient(&Zero { n: 1 }, &gp, &QuadratureSpec::monte_carlo(1000, 0).unwrap());
        assert!(matches!(r, Err(Error::DegenerateDenominator { .. })));
    }

    #[test]
    fn rejects_small_exponent() {
        let gp = critical_exponent(1, 0.5).unwrap();
        assert!(lp_norm(&Zero { n: 1 }, 0.5, &gp, &QuadratureSpec::default()).is_err());
    }
}
