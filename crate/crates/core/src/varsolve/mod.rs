//! Discrete variational solver on a point cloud over a Korányi ball `Ω`.
//!
//! Fields vanish outside `Ω`; the interaction of the cloud with the exterior
//! is a one-body term per point. The nonlocal form is dense and assembled in
//! parallel row by row, and solves go through a Cholesky factorization.

mod domain;
mod form;
mod solve;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::hgroup::{hnorm, GroupParams, GroupPoint};

pub use domain::{build_domain, exterior_diagonal, MIN_POINTS};
pub use form::{assemble_form, QuadraticForm};
pub use solve::{
    energy, energy_gradient, gradient_oracle, minimize_quotient, minimize_quotient_from,
    quotient_value, smallest_eigenpair, smallest_eigenpair_with, start_field, weak_residual,
    weak_residual_linear, GradientCheck, Minimizer,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDomain {
    pub points: Vec<GroupPoint>,
    /// Quadrature weights; they sum to about `|Ω|`.
    pub weights: Vec<f64>,
    /// `κ_i = ∫_{Ω^c} |η⁻¹∘p_i|^{−Q−2s} dη`.
    pub exterior_diag: Vec<f64>,
    /// Mesh scale.
    pub h: f64,
    pub radius: f64,
    pub n: usize,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub eigenvalue: f64,
    pub eigenvector: DiscreteField,
    pub residual: f64,
    pub iterations: usize,
}

/// Iteration controls shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 2000, seed: 0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("iteration cap must be positive"));
        }
        Ok(())
    }
}

impl DiscreteDomain {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn params(&self) -> Result<GroupParams> {
        crate::hgroup::critical_exponent(self.n, self.s)
    }

    /// Samples a function at the cloud points.
    pub fn interpolate(&self, f: impl Fn(&GroupPoint) -> f64 + Sync + Send) -> DiscreteField {
        use rayon::prelude::*;
        DiscreteField { values: self.points.par_iter().map(f).collect() }
    }

    pub fn check(&self) -> Result<()> {
        let m = self.points.len();
        if self.weights.len() != m || self.exterior_diag.len() != m {
            return Err(Error::Format(format!(
                "{m} points but {} weights and {} exterior terms",
                self.weights.len(),
                self.exterior_diag.len()
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.dim() != self.n {
                return Err(Error::Format(format!("point {i} has dimension {}", p.dim())));
            }
            if hnorm(p) >= self.radius {
                return Err(Error::Format(format!("point {i} lies outside the domain")));
            }
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Format("weights must be positive".into()));
        }
        if self.exterior_diag.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::Format("exterior terms must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let header = json!({
            "kind": "domain",
            "count": self.len(),
            "N": self.n,
            "s": self.s,
            "radius": self.radius,
            "h": self.h,
        });
        let mut payload = Vec::with_capacity(self.len() * (2 * self.n + 3));
        for p in &self.points {
            payload.extend(p.to_flat());
        }
        payload.extend_from_slice(&self.weights);
        payload.extend_from_slice(&self.exterior_diag);
        write_container(w, &header, &payload)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (header, payload) = read_container(r, "domain")?;
        let count = header_usize(&header, "count")?;
        let n = header_usize(&header, "N")?;
        let stride = 2 * n + 1;
        if payload.len() != count * (stride + 2) {
            return Err(Error::Format(format!(
                "payload holds {} values, expected {}",
                payload.len(),
                count * (stride + 2)
            )));
        }
        let points = payload[..count * stride]
            .chunks(stride)
            .map(GroupPoint::from_flat)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        let dom = DiscreteDomain {
            points,
            weights: payload[count * stride..count * (stride + 1)].to_vec(),
            exterior_diag: payload[count * (stride + 1)..].to_vec(),
            h: header_f64(&header, "h")?,
            radius: header_f64(&header, "radius")?,
            n,
            s: header_f64(&header, "s")?,
        };
        dom.check()?;
        Ok(dom)
    }
}

impl DiscreteField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_against(&self, dom: &DiscreteDomain) -> Result<()> {
        if self.len() != dom.len() {
            return Err(Error::invalid(format!(
                "field has {} values but the domain has {} points",
                self.len(),
                dom.len()
            )));
        }
        Ok(())
    }

    /// `Σ w_i u_i²`.
    pub fn mass(&self, dom: &DiscreteDomain) -> f64 {
        self.values.iter().zip(&dom.weights).map(|(u, w)| w * u * u).sum()
    }

    /// `(Σ w_i |u_i|^p)^{1/p}`.
    pub fn lp_norm(&self, dom: &DiscreteDomain, p: f64) -> f64 {
        let s: f64 = self.values.iter().zip(&dom.weights).map(|(u, w)| w * u.abs().powf(p)).sum();
        s.powf(1.0 / p)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let header = json!({ "kind": "field", "count": self.len() });
        write_container(w, &header, &self.values)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (header, values) = read_container(r, "field")?;
        let count = header_usize(&header, "count")?;
        if values.len() != count {
            return Err(Error::Format(format!("expected {count} values, found {}", values.len())));
        }
        Ok(Self { values })
    }
}

const MAGIC: &[u8; 8] = b"HFRACBIN";

/// Layout: magic, `u64` header length, JSON header, little-endian `f64` payload.
fn write_container<W: Write>(mut w: W, header: &serde_json::Value, payload: &[f64]) -> Result<()> {
    let text = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(&text)?;
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_container<R: Read>(mut r: R, kind: &str) -> Result<(serde_json::Value, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 20 {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text)?;
    let header: serde_json::Value = serde_json::from_slice(&text)?;
    if header.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(Error::Format(format!("container does not hold a {kind}")));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, payload))
}

fn header_usize(h: &serde_json::Value, key: &str) -> Result<usize> {
    h.get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| Error::Format(format!("header is missing integer `{key}`")))
}

fn header_f64(h: &serde_json::Value, key: &str) -> Result<f64> {
    h.get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Format(format!("header is missing number `{key}`")))
}
