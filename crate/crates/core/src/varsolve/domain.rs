//! Point clouds over Korányi balls and the exterior-interaction diagonal.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hgroup::{koranyi, GroupParams, GroupPoint};
use crate::quad::sampling::{kernel_mass, sphere_constant, sphere_direction, unit_ball_volume};
use crate::rng::{chunk_rng, STREAM_DIRECTIONS, STREAM_DOMAIN};
use crate::varsolve::DiscreteDomain;

pub const MIN_POINTS: usize = 50;
/// Directions used to average the exterior radial integrals (half are antipodes).
const DIRECTIONS: usize = 2048;
const ROOT_GRID: usize = 64;

fn subgrid(n: usize) -> usize {
    match n {
        1 => 6,
        2 => 3,
        _ => 2,
    }
}

/// Lattice point cloud over `Ω = B_R(0)`.
///
/// Cells have side `a` horizontally and `a²` vertically, so each has Haar
/// volume `a^Q` and the lattice is homogeneous under dilations. The lattice is
/// shifted by a seeded offset; every cell meeting `Ω` contributes one point at
/// the centroid of its sub-grid points inside `Ω`, weighted by the inside
/// fraction of the cell volume.
pub fn build_domain(radius: f64, n: usize, gp: &GroupParams, seed: u64) -> Result<DiscreteDomain> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("domain radius must be positive, got {radius}")));
    }
    if n < MIN_POINTS {
        return Err(Error::UnderResolved(format!(
            "a cloud of {n} points cannot resolve the ball; need at least {MIN_POINTS}"
        )));
    }
    let dim = gp.n;
    let volume = unit_ball_volume(dim) * radius.powi(gp.q as i32);
    let a = (volume / n as f64).powf(1.0 / gp.qf());
    let mut rng = chunk_rng(seed, STREAM_DOMAIN, 0);
    let offset: Vec<f64> = (0..2 * dim + 1).map(|_| rng.random::<f64>()).collect();

    // lattice index ranges covering the bounding box
    let hz = (radius / a).ceil() as i64 + 1;
    let ht = (radius * radius / (a * a)).ceil() as i64 + 1;
    let m = subgrid(dim);
    let cells_h = (2 * hz + 1) as usize;
    let cells_t = (2 * ht + 1) as usize;
    let total = cells_h.pow(2 * dim as u32) * cells_t;
    let r4 = radius.powi(4);
    let sub_total = m.pow(2 * dim as u32 + 1);
    let cell_volume = a.powi(gp.q as i32);

    let cells: Vec<Option<(Vec<f64>, f64)>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rest = idx;
            let mut lower = vec![0.0; 2 * dim + 1];
            for (j, l) in lower.iter_mut().enumerate().take(2 * dim) {
                let k = (rest % cells_h) as i64 - hz;
                rest /= cells_h;
                *l = (k as f64 + offset[j]) * a;
            }
            let k = rest as i64 - ht;
            lower[2 * dim] = (k as f64 + offset[2 * dim]) * a * a;
            // quick reject: nearest point of the cell is outside the ball
            let mut near_h = 0.0;
            for &l in lower.iter().take(2 * dim) {
                let d = if l > 0.0 { l } else if l + a < 0.0 { -(l + a) } else { 0.0 };
                near_h += d * d;
            }
            let lt = lower[2 * dim];
            let near_t = if lt > 0.0 { lt } else if lt + a * a < 0.0 { -(lt + a * a) } else { 0.0 };
            if near_h * near_h + near_t * near_t >= r4 {
                return None;
            }
            let mut inside = 0usize;
            let mut centroid = vec![0.0; 2 * dim + 1];
            let mut p = vec![0.0; 2 * dim + 1];
            for sub in 0..sub_total {
                let mut r = sub;
                for j in 0..=2 * dim {
                    let frac = ((r % m) as f64 + 0.5) / m as f64;
                    r /= m;
                    let side = if j == 2 * dim { a * a } else { a };
                    p[j] = lower[j] + frac * side;
                }
                let hsq: f64 = p[..2 * dim].iter().map(|v| v * v).sum();
                if hsq * hsq + p[2 * dim] * p[2 * dim] < r4 {
                    inside += 1;
                    centroid.iter_mut().zip(&p).for_each(|(c, v)| *c += v);
                }
            }
            if inside == 0 {
                return None;
            }
            centroid.iter_mut().for_each(|c| *c /= inside as f64);
            Some((centroid, cell_volume * inside as f64 / sub_total as f64))
        })
        .collect();

    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (c, w) in cells.into_iter().flatten() {
        points.push(GroupPoint::from_flat(&c)?);
        weights.push(w);
    }
    if points.len() < MIN_POINTS {
        return Err(Error::UnderResolved(format!(
            "only {} cells meet the ball of radius {radius}",
            points.len()
        )));
    }
    let exterior_diag = exterior_diagonal(&points, radius, gp, seed);
    if let Some((i, v)) = exterior_diag.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::UnderResolved(format!("exterior term at point {i} is {v}")));
    }
    Ok(DiscreteDomain { points, weights, exterior_diag, h: a, radius, n: gp.n, s: gp.s })
}

/// `κ(p) = ∫_{Ω^c} |η⁻¹∘p|^{−Q−2s} dη` for each point.
///
/// In polar coordinates around `p`, `η = p∘δ_ρω`, and the exit set along a
/// direction is where the quartic `|p∘δ_ρω|⁴ − R⁴` is positive. Its roots are
/// bracketed on a grid, refined by bisection, and the kernel `ρ^{−1−2s}` is
/// integrated in closed form over the outside intervals; the result is
/// averaged over a fixed set of directions.
pub fn exterior_diagonal(points: &[GroupPoint], radius: f64, gp: &GroupParams, seed: u64) -> Vec<f64> {
    let n = gp.n;
    let mut rng = chunk_rng(seed, STREAM_DIRECTIONS, 0);
    let mut dirs: Vec<GroupPoint> = Vec::with_capacity(DIRECTIONS);
    for _ in 0..DIRECTIONS / 2 {
        let d = sphere_direction(n, &mut rng);
        dirs.push(crate::hgroup::inverse(&d));
        dirs.push(d);
    }
    let c = sphere_constant(n);
    points
        .par_iter()
        .map(|p| {
            let sum: f64 = dirs.iter().map(|w| exit_kernel_mass(p, w, radius, gp.s)).sum();
            c * sum / dirs.len() as f64
        })
        .collect()
}

fn exit_kernel_mass(p: &GroupPoint, w: &GroupPoint, radius: f64, s: f64) -> f64 {
    // |z|² = A0 + A1ρ + A2ρ², t = T0 + T1ρ + T2ρ²
    let mut a0 = 0.0;
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut twist = 0.0;
    for j in 0..p.dim() {
        a0 += p.x[j] * p.x[j] + p.y[j] * p.y[j];
        a1 += 2.0 * (p.x[j] * w.x[j] + p.y[j] * w.y[j]);
        a2 += w.x[j] * w.x[j] + w.y[j] * w.y[j];
        twist += w.x[j] * p.y[j] - w.y[j] * p.x[j];
    }
    let (t0, t1, t2) = (p.t, 2.0 * twist, w.t);
    let r4 = radius.powi(4);
    let g = |rho: f64| {
        let z = a0 + rho * (a1 + rho * a2);
        let t = t0 + rho * (t1 + rho * t2);
        z * z + t * t - r4
    };
    let pn = koranyi(a0, t0);
    // beyond R + |p| every point is outside
    let top = radius + pn;
    let mut crossings = Vec::with_capacity(4);
    let mut prev_r = 0.0;
    let mut prev_g = g(0.0);
    for k in 1..=ROOT_GRID {
        let r = top * k as f64 / ROOT_GRID as f64;
        let gr = g(r);
        if (gr > 0.0) != (prev_g > 0.0) {
            let (mut lo, mut hi) = (prev_r, r);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (g(mid) > 0.0) == (prev_g > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(0.5 * (lo + hi));
        }
        prev_r = r;
        prev_g = gr;
    }
    let mut mass = 0.0;
    let mut outside_from: Option<f64> = None;
    for &x in &crossings {
        match outside_from.take() {
            None => outside_from = Some(x),
            Some(start) => mass += kernel_mass(start, x, s),
        }
    }
    // the last crossing leaves the ball for good
    match outside_from {
        Some(start) => mass += kernel_mass(start, f64::INFINITY, s),
        None => mass += kernel_mass(top, f64::INFINITY, s),
    }
    mass
}
