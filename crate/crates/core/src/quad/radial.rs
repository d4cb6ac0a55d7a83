//! Radial integrals `c ∫ f(ρ) ρ^{Q−1} dρ` in homogeneous polar coordinates.
//!
//! The range is split into dyadic blocks, each integrated with Gauss–Legendre.
//! Towards an infinite end or towards zero, blocks are added until their
//! contributions decay geometrically; a stable ratio lets the remainder be
//! summed in closed form, and a ratio that does not drop below one signals a
//! divergent integral.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};
use crate::hgroup::GroupParams;
use crate::quad::sampling::sphere_constant;
use crate::quad::{Estimate, QuadratureSpec};

const MAX_BLOCKS: usize = 4000;

struct Rules {
    fine: GaussLegendre,
    coarse: GaussLegendre,
}

impl Rules {
    fn new() -> Self {
        Self {
            fine: GaussLegendre::new(NonZeroUsize::new(32).unwrap()),
            coarse: GaussLegendre::new(NonZeroUsize::new(16).unwrap()),
        }
    }

    /// Block integral in log-radius, returning the value and a fine-vs-coarse error.
    fn block<F: Fn(f64) -> f64>(&self, f: &F, q: f64, a: f64, b: f64) -> (f64, f64) {
        let g = |lr: f64| {
            let r = lr.exp();
            f(r) * r.powf(q)
        };
        let v = self.fine.integrate(a.ln(), b.ln(), g);
        let w = self.coarse.integrate(a.ln(), b.ln(), g);
        (v, (v - w).abs())
    }
}

/// Sums blocks `[x_k, x_{k+1}]` with `x_{k+1} = x_k·step` until geometric decay.
fn geometric_run<F: Fn(f64) -> f64>(
    rules: &Rules,
    f: &F,
    q: f64,
    start: f64,
    step: f64,
) -> Result<(f64, f64, usize)> {
    let mut total = 0.0;
    let mut err = 0.0;
    let mut prev: Option<f64> = None;
    let mut ratios: Vec<f64> = Vec::new();
    let mut x = start;
    for k in 0..MAX_BLOCKS {
        let (a, b) = if step > 1.0 { (x, x * step) } else { (x * step, x) };
        let (v, e) = rules.block(f, q, a, b);
        if !v.is_finite() {
            return Err(Error::Divergence(format!("non-finite block near rho = {x:e}")));
        }
        total += v;
        err += e;
        x *= step;
        if v == 0.0 && prev == Some(0.0) {
            return Ok((total, err, k + 1));
        }
        if let Some(p) = prev {
            if p != 0.0 {
                ratios.push((v / p).abs());
            }
        }
        prev = Some(v);
        if ratios.len() >= 4 {
            let tail = &ratios[ratios.len() - 4..];
            let r = tail[3];
            let stable = tail.iter().all(|t| (t - r).abs() <= 1e-6 * r.max(1e-300));
            if stable && r >= 1.0 - 1e-9 {
                return Err(Error::Divergence(format!(
                    "block contributions stopped decaying (ratio {r:.6}) near rho = {x:e}"
                )));
            }
            if v.abs() <= 1e-17 * total.abs() {
                return Ok((total, err, k + 1));
            }
            if stable && k >= 8 {
                let rest = v * r / (1.0 - r);
                return Ok((total + rest, err + 1e-6 * rest.abs(), k + 1));
            }
        }
    }
    Err(Error::Divergence(format!("no geometric decay after {MAX_BLOCKS} blocks")))
}

/// `c ∫_a^b f(ρ) ρ^{Q−1} dρ` with `c = Q·|B_1|`; `b` may be infinite and `a` zero.
pub fn radial_integral<F>(f: F, range: (f64, f64), gp: &GroupParams, qs: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    qs.validate()?;
    let (a, b) = range;
    if !(a >= 0.0 && b > a) || a.is_infinite() || b.is_nan() {
        return Err(Error::invalid(format!("radial range must satisfy 0 <= a < b, got [{a}, {b}]")));
    }
    let c = sphere_constant(gp.n);
    let q = gp.qf();
    let rules = Rules::new();
    let mut total = 0.0;
    let mut err = 0.0;
    let mut blocks = 0usize;

    // finite core [lo, hi] with 0 < lo < hi < ∞
    let lo = if a > 0.0 { a } else if b.is_finite() { b * 0.5 } else { 1.0 };
    let hi = if b.is_finite() { b } else { lo.max(a) * 2.0 };
    let lo = lo.min(hi);
    if a == 0.0 {
        let (v, e, k) = geometric_run(&rules, &f, q, lo, 0.5)?;
        total += v;
        err += e;
        blocks += k;
    }
    let mut x = lo;
    while x < hi {
        let y = (x * 2.0).min(hi);
        let (v, e) = rules.block(&f, q, x, y);
        total += v;
        err += e;
        blocks += 1;
        x = y;
    }
    if b.is_infinite() {
        let (v, e, k) = geometric_run(&rules, &f, q, hi, 2.0)?;
        total += v;
        err += e;
        blocks += k;
    }
    if !total.is_finite() {
        return Err(Error::Divergence("radial integral is not finite".into()));
    }
    Ok(Estimate {
        value: c * total,
        stderr: c * err,
        samples_used: (blocks * 48) as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hgroup::critical_exponent;
    use crate::quad::unit_ball_volume;

    #[test]
    fn indicator_gives_unit_ball() {
        let gp = critical_exponent(1, 0.25).unwrap();
        let e = radial_integral(|_| 1.0, (0.0, 1.0), &gp, &QuadratureSpec::default()).unwrap();
        assert!((e.value - unit_ball_volume(1)).abs() < 1e-12 * e.value);
    }

    #[test]
    fn far_kernel_tail_matches_antiderivative() {
        for &s in &[0.1, 0.25, 0.45] {
            let gp = critical_exponent(1, s).unwrap();
            let q = gp.qf();
            let e = radial_integral(|r| r.powf(-q + 2.0 * s - 1.0), (1.0, f64::INFINITY), &gp, &QuadratureSpec::default())
                .unwrap();
            let exact = sphere_constant(1) / (1.0 - 2.0 * s);
            assert!((e.value - exact).abs() < 1e-9 * exact, "s={s}: {} vs {exact}", e.value);
        }
    }

    #[test]
    fn near_field_scaling_matches_antiderivative() {
        let gp = critical_exponent(2, 0.7).unwrap();
        let q = gp.qf();
        let e = radial_integral(|r| r.powf(2.0 - q - 2.0 * gp.s), (0.0, 1.0), &gp, &QuadratureSpec::default()).unwrap();
        let exact = sphere_constant(2) / (2.0 - 2.0 * gp.s);
        assert!((e.value - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn divergent_tail_is_detected() {
        let gp = critical_exponent(1, 0.25).unwrap();
        let q = gp.qf();
        let r = radial_integral(|r| r.powf(-q), (1.0, f64::INFINITY), &gp, &QuadratureSpec::default());
        assert!(matches!(r, Err(Error::Divergence(_))));
        let r = radial_integral(|r| r.powf(-q), (0.0, 1.0), &gp, &QuadratureSpec::default());
        assert!(matches!(r, Err(Error::Divergence(_))));
    }
}
