//! Random points on the Korányi sphere and radial proposals in polar form.
//!
//! Haar measure in homogeneous polar coordinates is `dξ = c ρ^{Q−1} dρ dω`,
//! where `c = Q·|B_1|` and `dω` is the normalized surface measure obtained by
//! projecting a uniform draw from the unit ball onto the sphere.

use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::hgroup::{Coords, GroupPoint};

/// `|B_1|` for the Korányi ball of `ℍ^N`.
///
/// The fiber over height `t` is a Euclidean `2N`-ball of radius `(1−t²)^{1/4}`,
/// so `|B_1| = ω_{2N} ∫_{−1}^{1} (1−t²)^{N/2} dt` with `ω_{2N} = π^N / N!`.
/// Substituting `t = sin θ` gives a smooth periodic integrand for Gauss–Legendre.
pub fn unit_ball_volume(n: usize) -> f64 {
    let gl = GaussLegendre::new(NonZeroUsize::new(64).unwrap());
    let fiber = gl.integrate(-PI / 2.0, PI / 2.0, |th: f64| th.cos().powi(n as i32 + 1));
    let omega: f64 = (1..=n).fold(PI.powi(n as i32), |acc, k| acc / k as f64);
    omega * fiber
}

/// Sphere constant `c` with `dξ = c ρ^{Q−1} dρ dω`.
pub fn sphere_constant(n: usize) -> f64 {
    (2 * n + 2) as f64 * unit_ball_volume(n)
}

/// Uniform point of the unit Korányi ball.
pub(crate) fn unit_ball_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GroupPoint {
    // Height marginal has density ∝ (1−t²)^{N/2}; sample by rejection.
    let t = loop {
        let t: f64 = 2.0 * rng.random::<f64>() - 1.0;
        let v: f64 = rng.random();
        if v <= (1.0 - t * t).powf(n as f64 / 2.0) {
            break t;
        }
    };
    let radius = (1.0 - t * t).sqrt().sqrt();
    let mut g: Coords = (0..2 * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rr = radius * rng.random::<f64>().powf(1.0 / (2 * n) as f64);
    let f = if gn > 0.0 { rr / gn } else { 0.0 };
    g.iter_mut().for_each(|v| *v *= f);
    GroupPoint {
        x: g[..n].iter().copied().collect(),
        y: g[n..].iter().copied().collect(),
        t,
    }
}

/// Direction drawn from the normalized Korányi surface measure.
pub(crate) fn sphere_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GroupPoint {
    loop {
        let p = unit_ball_point(n, rng);
        let r = crate::hgroup::hnorm(&p);
        if r > 1e-8 {
            return crate::hgroup::dilate_unchecked(1.0 / r, &p);
        }
    }
}

/// Log-logistic radius law `F(R) = z^b / (1 + z^b)`, `z = R / ℓ`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogLogistic {
    pub scale: f64,
    pub shape: f64,
}

impl LogLogistic {
    fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        // z^b/(1+z^b) = 1/(1+z^{−b}) stays accurate for large z
        1.0 / (1.0 + (r / self.scale).powf(-self.shape))
    }

    fn quantile(&self, u: f64) -> f64 {
        self.scale * (u / (1.0 - u)).powf(1.0 / self.shape)
    }

    /// Radial density divided by `R^{Q−1}`; finite at `R = 0` when `b ≥ Q`.
    fn reduced_pdf(&self, r: f64, q: f64) -> f64 {
        let z = r / self.scale;
        let zb = z.powf(self.shape);
        let denom = if zb.is_finite() { (1.0 + zb) * (1.0 + zb) } else { f64::INFINITY };
        self.shape / self.scale.powf(self.shape) * r.powf(self.shape - q) / denom
    }
}

/// Mixture of log-logistic radial laws with an optional lower truncation,
/// combined with uniform Korányi directions into a density on `ℍ^N`.
#[derive(Debug, Clone)]
pub(crate) struct RadialProposal {
    comps: Vec<(f64, LogLogistic, f64)>,
    r_min: f64,
    n: usize,
    q: f64,
    c: f64,
}

impl RadialProposal {
    /// `components` are `(weight, scale)`; the shape is the homogeneous dimension.
    pub fn new(n: usize, components: &[(f64, f64)], r_min: f64) -> Self {
        let q = (2 * n + 2) as f64;
        let total: f64 = components.iter().map(|c| c.0).sum();
        let comps = components
            .iter()
            .map(|&(w, scale)| {
                let law = LogLogistic { scale, shape: q };
                (w / total, law, law.cdf(r_min))
            })
            .collect();
        Self { comps, r_min, n, q, c: sphere_constant(n) }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (GroupPoint, f64) {
        let pick: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.comps.last().unwrap();
        for comp in &self.comps {
            acc += comp.0;
            if pick < acc {
                chosen = comp;
                break;
            }
        }
        let (_, law, f0) = *chosen;
        let radius = loop {
            let u = f0 + (1.0 - f0) * rng.random::<f64>();
            let r = law.quantile(u);
            if r > self.r_min && r.is_finite() && r > 0.0 {
                break r;
            }
        };
        let dir = sphere_direction(self.n, rng);
        (crate::hgroup::dilate_unchecked(radius, &dir), radius)
    }

    /// Density with respect to Haar measure at a point of norm `r`.
    pub fn density(&self, r: f64) -> f64 {
        if r <= self.r_min {
            return 0.0;
        }
        let radial: f64 = self
            .comps
            .iter()
            .map(|(w, law, f0)| w * law.reduced_pdf(r, self.q) / (1.0 - f0))
            .sum();
        radial / self.c
    }
}

/// Geometric boundaries `lo·(hi/lo)^{k/K}`, `k = 0..=K`.
pub(crate) fn geometric_edges(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    let mut e: Vec<f64> = (0..=k).map(|i| lo * (ratio * i as f64 / k as f64).exp()).collect();
    e[0] = lo;
    e[k] = hi;
    e
}

/// `∫_a^b ρ^{−1−2s} dρ`.
pub(crate) fn kernel_mass(a: f64, b: f64, s: f64) -> f64 {
    if b.is_infinite() {
        return a.powf(-2.0 * s) / (2.0 * s);
    }
    (a.powf(-2.0 * s) - b.powf(-2.0 * s)) / (2.0 * s)
}

/// Draw from the density `∝ ρ^{−1−2s}` on `[a, b]`.
pub(crate) fn kernel_radius(a: f64, b: f64, s: f64, u: f64) -> f64 {
    let la = a.powf(-2.0 * s);
    let lb = b.powf(-2.0 * s);
    (la - u * (la - lb)).powf(-1.0 / (2.0 * s))
}
