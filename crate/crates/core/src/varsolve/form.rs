//! Dense assembly of the nonlocal quadratic form.

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hgroup::{hdist_unchecked, GroupParams};
use crate::varsolve::{DiscreteDomain, DiscreteField};

/// Symmetric matrix of
/// `Q(u, v) = Σ_{i≠j} w_i w_j (u_i−u_j)(v_i−v_j) K_ij + 2 Σ_i w_i κ_i u_i v_i`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub(crate) mat: Mat<f64>,
}

impl QuadraticForm {
    pub fn len(&self) -> usize {
        self.mat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    /// Matrix-vector product; each row is an independent fixed-order dot product.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        // symmetric, so row i equals column i, which is contiguous
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let col = self.mat.col(i);
                let mut acc = 0.0;
                for (j, uj) in u.iter().enumerate() {
                    acc += col[j] * uj;
                }
                acc
            })
            .collect()
    }

    pub fn eval(&self, u: &DiscreteField, v: &DiscreteField) -> f64 {
        dot(&self.apply(&u.values), &v.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel averaged over a shell of width `h` around distance `h`, used for
/// pairs closer than the mesh scale.
fn near_kernel(h: f64, gp: &GroupParams) -> f64 {
    let (a, b) = (0.5 * h, 1.5 * h);
    let s = gp.s;
    let q = gp.qf();
    let kernel = (a.powf(-2.0 * s) - b.powf(-2.0 * s)) / (2.0 * s);
    let volume = (b.powf(q) - a.powf(q)) / q;
    kernel / volume
}

pub fn assemble_form(dom: &DiscreteDomain, gp: &GroupParams) -> Result<QuadraticForm> {
    dom.check()?;
    if dom.n != gp.n || dom.s != gp.s {
        return Err(Error::invalid("domain and group parameters disagree on N or s"));
    }
    let m = dom.len();
    let expo = -gp.kernel_exponent();
    let near = near_kernel(dom.h, gp);
    let cols: Vec<Result<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let pi = &dom.points[i];
            let wi = dom.weights[i];
            let mut col = vec![0.0; m];
            let mut diag = 0.0;
            for j in 0..m {
                if j == i {
                    continue;
                }
                let d = hdist_unchecked(pi, &dom.points[j]);
                let k = if d < dom.h { near } else { d.powf(expo) };
                let e = 2.0 * (wi * dom.weights[j]) * k;
                if !e.is_finite() {
                    return Err(Error::Assembly { i, j, value: e });
                }
                col[j] = -e;
                diag += e;
            }
            col[i] = diag + 2.0 * wi * dom.exterior_diag[i];
            if !col[i].is_finite() {
                return Err(Error::Assembly { i, j: i, value: col[i] });
            }
            Ok(col)
        })
        .collect();
    let mut mat = Mat::<f64>::zeros(m, m);
    for (i, col) in cols.into_iter().enumerate() {
        let col = col?;
        for (j, v) in col.into_iter().enumerate() {
            mat[(j, i)] = v;
        }
    }
    Ok(QuadraticForm { mat })
}
