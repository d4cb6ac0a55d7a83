//! Heisenberg group algebra on `ℍ^N = ℝ^N × ℝ^N × ℝ`.
//!
//! Points are `(x, y, t)` with the twisted product
//! `(x, y, t) ∘ (x', y', t') = (x + x', y + y', t + t' + 2(x'·y − y'·x))`,
//! anisotropic dilations `δ_λ(x, y, t) = (λx, λy, λ²t)` and the Korányi norm
//! `|ξ| = ((|x|² + |y|²)² + t²)^{1/4}`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type Coords = SmallVec<[f64; 4]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub x: Coords,
    pub y: Coords,
    pub t: f64,
}

impl GroupPoint {
    pub fn new(x: &[f64], y: &[f64], t: f64) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::invalid(format!(
                "x and y must share a length >= 1 (got {} and {})",
                x.len(),
                y.len()
            )));
        }
        if !(x.iter().chain(y.iter()).all(|v| v.is_finite()) && t.is_finite()) {
            return Err(Error::invalid("group point coordinates must be finite"));
        }
        Ok(Self {
            x: Coords::from_slice(x),
            y: Coords::from_slice(y),
            t,
        })
    }

    pub fn origin(n: usize) -> Self {
        Self {
            x: SmallVec::from_elem(0.0, n),
            y: SmallVec::from_elem(0.0, n),
            t: 0.0,
        }
    }

    /// Builds a point from the flat layout `[x_1..x_N, y_1..y_N, t]`.
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() < 3 || v.len().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "flat coordinates must have odd length 2N+1 >= 3, got {}",
                v.len()
            )));
        }
        let n = (v.len() - 1) / 2;
        Self::new(&v[..n], &v[n..2 * n], v[2 * n])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim() + 1);
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v.push(self.t);
        v
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_origin(&self) -> bool {
        self.t == 0.0 && self.x.iter().chain(self.y.iter()).all(|&v| v == 0.0)
    }

    /// `|x|² + |y|²`.
    pub fn horizontal_sq(&self) -> f64 {
        self.x.iter().chain(self.y.iter()).map(|v| v * v).sum()
    }
}

fn check_dims(a: &GroupPoint, b: &GroupPoint) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: N = {} vs N = {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Group product `a ∘ b`.
pub fn compose(a: &GroupPoint, b: &GroupPoint) -> Result<GroupPoint> {
    check_dims(a, b)?;
    Ok(compose_unchecked(a, b))
}

pub(crate) fn compose_unchecked(a: &GroupPoint, b: &GroupPoint) -> GroupPoint {
    let mut twist = 0.0;
    for j in 0..a.dim() {
        twist += b.x[j] * a.y[j] - b.y[j] * a.x[j];
    }
    GroupPoint {
        x: a.x.iter().zip(&b.x).map(|(p, q)| p + q).collect(),
        y: a.y.iter().zip(&b.y).map(|(p, q)| p + q).collect(),
        t: a.t + b.t + 2.0 * twist,
    }
}

/// Group inverse; the twist term vanishes for `a ∘ (−a)`, so `a⁻¹ = (−x, −y, −t)`.
pub fn inverse(a: &GroupPoint) -> GroupPoint {
    GroupPoint {
        x: a.x.iter().map(|v| -v).collect(),
        y: a.y.iter().map(|v| -v).collect(),
        t: -a.t,
    }
}

pub fn dilate(lam: f64, a: &GroupPoint) -> Result<GroupPoint> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(Error::invalid(format!(
            "dilation factor must be positive, got {lam}"
        )));
    }
    Ok(dilate_unchecked(lam, a))
}

pub(crate) fn dilate_unchecked(lam: f64, a: &GroupPoint) -> GroupPoint {
    GroupPoint {
        x: a.x.iter().map(|v| lam * v).collect(),
        y: a.y.iter().map(|v| lam * v).collect(),
        t: lam * lam * a.t,
    }
}

/// Korányi norm.
pub fn hnorm(a: &GroupPoint) -> f64 {
    koranyi(a.horizontal_sq(), a.t)
}

#[inline]
pub(crate) fn koranyi(horizontal_sq: f64, t: f64) -> f64 {
    // hypot avoids overflow of the fourth powers for large coordinates
    horizontal_sq.hypot(t).sqrt()
}

/// Homogeneous distance `|b⁻¹ ∘ a|`, computed without allocating.
pub fn hdist(a: &GroupPoint, b: &GroupPoint) -> Result<f64> {
    check_dims(a, b)?;
    Ok(hdist_unchecked(a, b))
}

#[inline]
pub(crate) fn hdist_unchecked(a: &GroupPoint, b: &GroupPoint) -> f64 {
    // b⁻¹ ∘ a = (a.x − b.x, a.y − b.y, a.t − b.t + 2(a.x·(−b.y) − a.y·(−b.x)))
    let mut hsq = 0.0;
    let mut twist = 0.0;
    for j in 0..a.dim() {
        let dx = a.x[j] - b.x[j];
        let dy = a.y[j] - b.y[j];
        hsq += dx * dx + dy * dy;
        twist += a.y[j] * b.x[j] - a.x[j] * b.y[j];
    }
    koranyi(hsq, a.t - b.t + 2.0 * twist)
}

/// Dimension bookkeeping for `ℍ^N` with fractional order `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub n: usize,
    /// Homogeneous dimension `2N + 2`.
    pub q: usize,
    pub s: f64,
    /// Critical exponent `2Q / (Q − 2s)`.
    pub q_star: f64,
}

impl GroupParams {
    pub fn qf(&self) -> f64 {
        self.q as f64
    }

    /// Exponent of the kernel `|η⁻¹∘ξ|^{−(Q+2s)}`.
    pub fn kernel_exponent(&self) -> f64 {
        self.qf() + 2.0 * self.s
    }

    /// `Q − 2s`, the decay exponent of the extremal and the critical scaling weight.
    pub fn q_minus_2s(&self) -> f64 {
        self.qf() - 2.0 * self.s
    }
}

pub fn critical_exponent(n: usize, s: f64) -> Result<GroupParams> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid(format!("s must lie in (0, 1), got {s}")));
    }
    let q = 2 * n + 2;
    let qf = q as f64;
    Ok(GroupParams {
        n,
        q,
        s,
        q_star: 2.0 * qf / (qf - 2.0 * s),
    })
}
