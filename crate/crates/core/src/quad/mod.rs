//! Estimators for the singular double integrals and norms of the problem:
//! the Gagliardo seminorm, `L^p` norms, Sobolev-type quotients, ball volumes
//! and radial integrals in homogeneous polar coordinates.
//!
//! Every estimate carries a standard error. Monte Carlo estimates are
//! bit-reproducible for a fixed spec and seed regardless of thread count.

mod pairs;
mod radial;
pub mod sampling;
mod single;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use pairs::{gagliardo_sq, gagliardo_sq_detailed, gagliardo_sq_difference, GagliardoEstimate};
pub use radial::radial_integral;
pub use sampling::{sphere_constant, unit_ball_volume};
pub use single::{
    ball_volume, ball_volume_at, lp_integral, lp_integral_difference, lp_norm, s_lambda_quotient,
    s_lambda_quotient_parts, sobolev_quotient, QuotientParts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MonteCarloStratified,
    TensorGrid,
}

/// Integration region. `Ball` restricts both points of a pair to `B_R`;
/// `Domain` integrates pairs over `(ℍ^N×ℍ^N) ∖ (Ω^c×Ω^c)` with `Ω = B_R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    FullSpace,
    Ball { radius: f64 },
    Domain { radius: f64 },
}

impl Region {
    pub(crate) fn radius(&self) -> Option<f64> {
        match *self {
            Region::FullSpace => None,
            Region::Ball { radius } | Region::Domain { radius } => Some(radius),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub method: Method,
    pub samples: u64,
    pub annuli: usize,
    pub seed: u64,
    pub region: Region,
}

pub const MIN_SAMPLES: u64 = 1000;
pub const MIN_ANNULI: usize = 4;

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            method: Method::MonteCarloStratified,
            samples: 1_000_000,
            annuli: 8,
            seed: 0,
            region: Region::FullSpace,
        }
    }
}

impl QuadratureSpec {
    pub fn new(method: Method, samples: u64, annuli: usize, seed: u64, region: Region) -> Result<Self> {
        let qs = Self { method, samples, annuli, seed, region };
        qs.validate()?;
        Ok(qs)
    }

    pub fn monte_carlo(samples: u64, seed: u64) -> Result<Self> {
        Self::new(Method::MonteCarloStratified, samples, 8, seed, Region::FullSpace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < MIN_SAMPLES {
            return Err(Error::invalid(format!(
                "sample budget must be at least {MIN_SAMPLES}, got {}",
                self.samples
            )));
        }
        if self.annuli < MIN_ANNULI {
            return Err(Error::invalid(format!(
                "need at least {MIN_ANNULI} annuli, got {}",
                self.annuli
            )));
        }
        if let Some(r) = self.region.radius() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!("region radius must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: u64) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_region(mut self, region: Region) -> Self {
        self.region = region;
        self
    }

    /// Short hex digest of the canonical JSON form.
    pub fn spec_hash(&self) -> String {
        let text = serde_json::to_string(&serde_json::to_value(self).expect("spec serializes"))
            .expect("spec serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples_used: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, samples_used: 0 }
    }

    /// Ratio `a/b` with delta-method error for independent estimates.
    pub fn ratio(a: Estimate, b: Estimate) -> Estimate {
        let q = a.value / b.value;
        let ra = if a.value != 0.0 { a.stderr / a.value } else { 0.0 };
        let rb = b.stderr / b.value;
        let stderr = if a.value != 0.0 {
            q.abs() * (ra * ra + rb * rb).sqrt()
        } else {
            a.stderr / b.value.abs()
        };
        Estimate { value: q, stderr, samples_used: a.samples_used + b.samples_used }
    }

    /// `value^p` with delta-method error.
    pub fn powf(self, p: f64) -> Estimate {
        let v = self.value.powf(p);
        let d = if self.value != 0.0 { (p * v / self.value).abs() } else { 0.0 };
        Estimate { value: v, stderr: d * self.stderr, samples_used: self.samples_used }
    }

    /// Combined error of the difference of two independent estimates.
    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    pub fn record(&self, label: &str, qs: &QuadratureSpec) -> EstimateRecord {
        EstimateRecord {
            label: label.to_string(),
            value: self.value,
            stderr: self.stderr,
            samples: self.samples_used,
            seed: qs.seed,
            spec_hash: qs.spec_hash(),
        }
    }
}

/// Serialized form of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub label: String,
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
    #[serde(rename = "spec-hash")]
    pub spec_hash: String,
}

impl EstimateRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }
}

pub(crate) fn require_monte_carlo(qs: &QuadratureSpec, what: &str) -> Result<()> {
    if qs.method == Method::TensorGrid {
        return Err(Error::invalid(format!(
            "{what} needs the stratified Monte Carlo method; tensor grids cannot resolve the singular kernel"
        )));
    }
    Ok(())
}
