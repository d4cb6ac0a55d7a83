//! ε-sweeps of the concentration asymptotics, power-law fits and verdicts.
//!
//! Every quantity is evaluated on a decreasing grid of relative concentration
//! parameters (in units of [`BubbleSpec::eps_unit_with`]). Exponent claims are
//! tested by weighted log-log fits; boundedness claims by a growth gate.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble::{gradient_sup_ratio, increment_bound_check, sup_ratio, BubbleSpec, Provenance};
use crate::error::{Error, Result};
use crate::hgroup::GroupParams;
use crate::quad::{
    gagliardo_sq, gagliardo_sq_difference, lp_integral, lp_integral_difference, s_lambda_quotient,
    sobolev_quotient, Estimate, QuadratureSpec,
};

pub const DEFAULT_GRID: [f64; 5] = [0.5, 0.35, 0.25, 0.18, 0.125];
/// Smallest relative ε accepted unless explicitly allowed.
pub const MIN_EPS: f64 = 0.125;
/// Largest ratio between consecutive grid points; `1/√2` rounded up to
/// accommodate two-digit grids such as [`DEFAULT_GRID`].
pub const MAX_GRID_RATIO: f64 = 0.75;
pub const DEFAULT_TOL_REL: f64 = 0.15;
pub const MIN_R_SQUARED: f64 = 0.95;
/// Largest growth per halving of ε a bounded quantity may show between the two
/// smallest grid points; a blow-up `ε^{−p}` shows `2^p`, so this rejects `p > 0.32`.
pub const MAX_BOUNDED_GROWTH: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    /// `sup_{|p|>r} u_ε/ε^{(Q−2s)/2}`.
    SupRatio,
    /// `sup_{|p|>r} |∇_ℍ u_ε|/ε^{(Q−2s)/2}`.
    GradientSupRatio,
    /// Increment constant over pairs outside `B_r`.
    IncrementConstant,
    /// `[u_ε]²`.
    Seminorm,
    /// `[u_ε]² − [U_ε]²`, estimated directly.
    SeminormExcess,
    /// `‖u_ε‖²_{L²}`.
    L2Norm,
    /// `‖u_ε‖^{Q*}_{Q*}`.
    CriticalNorm,
    /// `‖u_ε‖^{Q*}_{Q*} − ‖U_ε‖^{Q*}_{Q*}`, estimated directly.
    CriticalCorrection,
    /// `S_{s,λ}(u_ε)`.
    SLambda,
}

impl Quantity {
    pub fn label(&self) -> &'static str {
        match self {
            Quantity::SupRatio => "sup-ratio",
            Quantity::GradientSupRatio => "gradient-sup-ratio",
            Quantity::IncrementConstant => "increment-constant",
            Quantity::Seminorm => "seminorm",
            Quantity::SeminormExcess => "seminorm-excess",
            Quantity::L2Norm => "l2-norm",
            Quantity::CriticalNorm => "critical-norm",
            Quantity::CriticalCorrection => "critical-correction",
            Quantity::SLambda => "s-lambda",
        }
    }
}

/// Everything a sweep needs besides the grid.
#[derive(Debug, Clone)]
pub struct SweepContext {
    /// Calibrated bubble; its `eps` is overwritten per row.
    pub spec: BubbleSpec,
    pub quad: QuadratureSpec,
    /// Points (or pairs) for the empirical sups.
    pub sup_samples: usize,
    /// Width-to-cutoff ratio at relative ε = 1.
    pub eps_scale: f64,
    /// `λ` for [`Quantity::SLambda`].
    pub lambda: f64,
    /// Accept grid points below [`MIN_EPS`].
    pub allow_small_eps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub value: f64,
    pub stderr: f64,
    /// Failure annotation; the row is excluded from fits when set.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub quantity: Quantity,
    pub rows: Vec<SweepRow>,
    pub params: GroupParams,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub rows_used: usize,
}

pub fn validate_grid(grid: &[f64], allow_small: bool) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::invalid(format!("an ε grid needs at least 4 points, got {}", grid.len())));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("grid values must be positive"));
    }
    for w in grid.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::invalid("the ε grid must be strictly decreasing"));
        }
        if w[1] / w[0] > MAX_GRID_RATIO {
            return Err(Error::invalid(format!(
                "grid step {} → {} is finer than geometric spacing allows (ratio {:.3} > {MAX_GRID_RATIO})",
                w[0],
                w[1],
                w[1] / w[0]
            )));
        }
    }
    let last = grid[grid.len() - 1];
    if !allow_small && last < MIN_EPS * (1.0 - 1e-12) {
        return Err(Error::invalid(format!(
            "ε = {last} is below {MIN_EPS}, where the default budget under-samples the bubble"
        )));
    }
    Ok(())
}

fn evaluate(quantity: Quantity, eps_rel: f64, ctx: &SweepContext) -> Result<Estimate> {
    let spec = ctx.spec.with_relative_eps_scaled(eps_rel, ctx.eps_scale)?;
    let gp = spec.params;
    let qs = &ctx.quad;
    let sup = |v: f64, spread: f64, n: u64| Estimate { value: v, stderr: spread, samples_used: n };
    Ok(match quantity {
        Quantity::SupRatio => {
            let r = sup_ratio(&spec, spec.r, ctx.sup_samples, qs.seed)?;
            sup(r.value, r.spread, r.samples)
        }
        Quantity::GradientSupRatio => {
            let r = gradient_sup_ratio(&spec, spec.r, ctx.sup_samples, qs.seed)?;
            sup(r.value, r.spread, r.samples)
        }
        Quantity::IncrementConstant => {
            let r = increment_bound_check(&spec, ctx.sup_samples, qs.seed)?;
            sup(r.constant, r.spread, r.pairs)
        }
        Quantity::Seminorm => gagliardo_sq(&spec.u_eps(), &gp, qs)?,
        Quantity::SeminormExcess => {
            gagliardo_sq_difference(&spec.u_eps(), &spec.u_eps_full(), spec.r, &gp, qs)?.estimate
        }
        Quantity::L2Norm => lp_integral(&spec.u_eps(), 2.0, &gp, qs)?,
        Quantity::CriticalNorm => lp_integral(&spec.u_eps(), gp.q_star, &gp, qs)?,
        Quantity::CriticalCorrection => {
            lp_integral_difference(&spec.u_eps(), &spec.u_eps_full(), gp.q_star, spec.r, &gp, qs)?
        }
        Quantity::SLambda => s_lambda_quotient(&spec.u_eps(), ctx.lambda, &gp, qs)?,
    })
}

/// Evaluates `quantity` at each grid point. Rows are independent and run
/// concurrently; all rows share the quadrature seed (common random numbers).
pub fn sweep(quantity: Quantity, grid: &[f64], ctx: &SweepContext) -> Result<SweepTable> {
    validate_grid(grid, ctx.allow_small_eps)?;
    ctx.quad.validate()?;
    let rows = grid
        .par_iter()
        .map(|&eps| match evaluate(quantity, eps, ctx) {
            Ok(e) => SweepRow { eps, value: e.value, stderr: e.stderr, failure: None },
            Err(err) => SweepRow { eps, value: f64::NAN, stderr: f64::NAN, failure: Some(err.to_string()) },
        })
        .collect();
    Ok(SweepTable {
        quantity,
        rows,
        params: ctx.spec.params,
        provenance: ctx.spec.provenance.clone(),
    })
}

impl SweepTable {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    /// RFC-4180 CSV with columns `quantity,eps,value,stderr,failure` followed
    /// by one constant column per `(name, value)` in `meta`.
    pub fn write_csv<W: Write>(&self, w: W, meta: &[(&str, String)]) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["quantity", "eps", "value", "stderr", "failure"];
        header.extend(meta.iter().map(|m| m.0));
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                self.quantity.label().to_string(),
                format!("{:e}", row.eps),
                format!("{:e}", row.value),
                format!("{:e}", row.stderr),
                row.failure.clone().unwrap_or_default(),
            ];
            rec.extend(meta.iter().map(|m| m.1.clone()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Inverse-variance weighted least squares of `log|value − baseline|` on `log ε`.
pub fn fit_power(table: &SweepTable, baseline: Option<f64>) -> Result<PowerFit> {
    let base = baseline.unwrap_or(0.0);
    let mut pts = Vec::new();
    let mut sign = 0.0;
    for (i, row) in table.rows.iter().enumerate() {
        if row.failure.is_some() {
            continue;
        }
        let d = row.value - base;
        if !(d.abs() >= 2.0 * row.stderr) || d == 0.0 {
            return Err(Error::InsufficientSignal { row: i, value: d.abs(), stderr: row.stderr });
        }
        if sign != 0.0 && d.signum() != sign {
            return Err(Error::invalid(format!("row {i} changes sign relative to the baseline")));
        }
        sign = d.signum();
        // var(log|d|) ≈ (σ/|d|)²; exact rows get a tiny floor
        let rel = (row.stderr / d.abs()).max(1e-12);
        pts.push((row.eps.ln(), d.abs().ln(), 1.0 / (rel * rel)));
    }
    if pts.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 usable rows, have {}", pts.len())));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| p.2 * (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("fit rows share a single ε"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PowerFit { exponent: slope, log_intercept: intercept, r_squared, rows_used: pts.len() })
}

/// How a verdict compares the fitted exponent with the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gate {
    /// `|α − α₀| ≤ tol·|α₀|` and `R² ≥ 0.95`.
    TwoSided,
    /// `α ≥ (1 − tol)·α₀` and `R² ≥ 0.95`.
    AtLeast,
    /// Values grow by at most 2× per halving of ε.
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub lemma: String,
    pub quantity: Quantity,
    pub gate: Gate,
    pub predicted_exponent: f64,
    pub tol_rel: f64,
    pub fitted: Option<f64>,
    pub r2: Option<f64>,
    /// `None` when the data could not decide.
    pub pass: Option<bool>,
    pub note: String,
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        self.pass == Some(true)
    }

    pub fn is_inconclusive(&self) -> bool {
        self.pass.is_none()
    }
}

fn check_tol(tol_rel: f64) -> Result<()> {
    if !(tol_rel > 0.0 && tol_rel < 1.0) {
        return Err(Error::invalid(format!("relative tolerance must lie in (0, 1), got {tol_rel}")));
    }
    Ok(())
}

/// Two-sided exponent verdict.
pub fn verdict(fit: &PowerFit, predicted: f64, tol_rel: f64) -> Result<bool> {
    check_tol(tol_rel)?;
    Ok((fit.exponent - predicted).abs() <= tol_rel * predicted.abs() && fit.r_squared >= MIN_R_SQUARED)
}

/// One-sided verdict: the fitted exponent is at least `(1 − tol)·predicted`.
pub fn verdict_at_least(fit: &PowerFit, predicted: f64, tol_rel: f64) -> Result<bool> {
    check_tol(tol_rel)?;
    Ok(fit.exponent >= (1.0 - tol_rel) * predicted && fit.r_squared >= MIN_R_SQUARED)
}

fn halving_growth(a: &SweepRow, b: &SweepRow) -> f64 {
    (b.value / a.value).powf(std::f64::consts::LN_2 / (a.eps / b.eps).ln())
}

/// Largest growth of consecutive rows per halving of ε, `(v_{k+1}/v_k)^{ln 2/ln(ε_k/ε_{k+1})}`.
pub fn growth_per_halving(table: &SweepTable) -> Option<f64> {
    let rows: Vec<&SweepRow> = table.rows.iter().filter(|r| r.failure.is_none()).collect();
    rows.windows(2).map(|w| halving_growth(w[0], w[1])).reduce(f64::max)
}

/// Growth per halving between the two smallest usable grid points.
pub fn final_growth_per_halving(table: &SweepTable) -> Option<f64> {
    let rows: Vec<&SweepRow> = table.rows.iter().filter(|r| r.failure.is_none()).collect();
    rows.windows(2).last().map(|w| halving_growth(w[0], w[1]))
}

/// Builds the verdict for a table under the given gate.
pub fn judge(lemma: &str, table: &SweepTable, gate: Gate, predicted: f64, tol_rel: f64) -> Result<Verdict> {
    check_tol(tol_rel)?;
    let mut v = Verdict {
        lemma: lemma.to_string(),
        quantity: table.quantity,
        gate,
        predicted_exponent: predicted,
        tol_rel,
        fitted: None,
        r2: None,
        pass: None,
        note: String::new(),
    };
    if table.failed_rows() > 0 {
        v.note = format!("{} rows failed to evaluate", table.failed_rows());
        if table.rows.len() - table.failed_rows() < 3 {
            return Ok(v);
        }
    }
    match gate {
        Gate::Bounded => {
            let fit = fit_power(table, None).ok();
            v.fitted = fit.map(|f| f.exponent);
            v.r2 = fit.map(|f| f.r_squared);
            match (final_growth_per_halving(table), growth_per_halving(table)) {
                (Some(g), Some(worst)) if g.is_finite() => {
                    v.pass = Some(g <= MAX_BOUNDED_GROWTH);
                    v.note = format!("growth per halving of ε at the finest pair: {g:.4} (largest {worst:.4})");
                }
                _ => v.note = "not enough rows for a growth gate".into(),
            }
        }
        Gate::TwoSided | Gate::AtLeast => match fit_power(table, None) {
            Ok(fit) => {
                v.fitted = Some(fit.exponent);
                v.r2 = Some(fit.r_squared);
                v.pass = Some(if gate == Gate::TwoSided {
                    verdict(&fit, predicted, tol_rel)?
                } else {
                    verdict_at_least(&fit, predicted, tol_rel)?
                });
            }
            Err(e @ Error::InsufficientSignal { .. }) => v.note = e.to_string(),
            Err(e) => return Err(e),
        },
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictDropReport {
    pub lambda: f64,
    pub s_hat: f64,
    pub s_hat_stderr: f64,
    pub table: Option<SweepTable>,
    /// `Ŝ − S_{s,λ}(u_ε)` at the smallest ε.
    pub drop: Option<f64>,
    pub combined_stderr: Option<f64>,
    /// Drop in units of the combined standard error.
    pub sigmas: Option<f64>,
    /// Whether the drop shrinks monotonically with ε, as `λ‖u_ε‖²_{L²} ∝ ε^{2s}` does.
    pub drop_shrinks_with_eps: Option<bool>,
    pub pass: Option<bool>,
    pub note: String,
}

/// Compares `S_{s,λ}(u_ε)` with `Ŝ` across the grid; passes when the value at
/// the smallest ε lies at least 3 combined standard errors below `Ŝ`.
pub fn strict_drop_check(lambda: f64, grid: &[f64], ctx: &SweepContext, s_hat: Estimate) -> Result<StrictDropReport> {
    let mut report = StrictDropReport {
        lambda,
        s_hat: s_hat.value,
        s_hat_stderr: s_hat.stderr,
        table: None,
        drop: None,
        combined_stderr: None,
        sigmas: None,
        drop_shrinks_with_eps: None,
        pass: None,
        note: String::new(),
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if lambda == 0.0 {
        report.note = "skipped: a strict drop needs lambda > 0".into();
        return Ok(report);
    }
    let ctx = SweepContext { lambda, ..ctx.clone() };
    let table = sweep(Quantity::SLambda, grid, &ctx)?;
    let last = table.rows.last().expect("validated grid");
    if let Some(f) = &last.failure {
        report.note = format!("smallest-ε row failed: {f}");
        report.table = Some(table);
        return Ok(report);
    }
    let drop = s_hat.value - last.value;
    let se = s_hat.stderr.hypot(last.stderr);
    report.drop = Some(drop);
    report.combined_stderr = Some(se);
    report.sigmas = Some(drop / se);
    report.pass = Some(drop >= 3.0 * se);
    let drops: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| r.failure.is_none())
        .map(|r| s_hat.value - r.value)
        .collect();
    report.drop_shrinks_with_eps = Some(drops.windows(2).all(|w| w[1] <= w[0]));
    report.table = Some(table);
    Ok(report)
}

/// Computes `κ = ‖U‖_{Q*}`, `Ŝ = [ū]²/‖ū‖²_{Q*}` and `σ = Ŝ^{1/(2s)}`, and
/// returns the resulting bubble with cutoff radius `r` and `eps = 1`.
pub fn calibrate(params: GroupParams, r: f64, qs: &QuadratureSpec) -> Result<(BubbleSpec, Estimate, Estimate)> {
    qs.validate()?;
    if qs.region != crate::quad::Region::FullSpace {
        return Err(Error::invalid("bubble constants are integrals over the whole group"));
    }
    let unit = BubbleSpec::new(params, 1.0, 1.0, 1.0, r, Provenance::default())?;
    let integral = lp_integral(&unit.extremal(), params.q_star, &params, qs)?;
    let kappa = integral.powf(1.0 / params.q_star);
    let normed = BubbleSpec::new(params, kappa.value, 1.0, 1.0, r, Provenance::default())?;
    let s_hat = sobolev_quotient(&normed.normalized(), &params, qs)?;
    let sigma = s_hat.value.powf(1.0 / (2.0 * params.s));
    let provenance = Provenance {
        method: "monte-carlo-stratified".into(),
        samples: qs.samples,
        seed: qs.seed,
        annuli: qs.annuli,
        kappa_stderr: kappa.stderr,
        s_hat: s_hat.value,
        s_hat_stderr: s_hat.stderr,
        spec_hash: qs.spec_hash(),
        config_hash: String::new(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let spec = BubbleSpec::new(params, kappa.value, sigma, 1.0, r, provenance)?;
    Ok((spec, kappa, s_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hgroup::critical_exponent;

    fn table(rows: &[(f64, f64, f64)]) -> SweepTable {
        SweepTable {
            quantity: Quantity::L2Norm,
            rows: rows
                .iter()
                .map(|&(eps, value, stderr)| SweepRow { eps, value, stderr, failure: None })
                .collect(),
            params: critical_exponent(1, 0.25).unwrap(),
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let rows: Vec<_> = DEFAULT_GRID.iter().map(|&e| (e, 3.0 * e * e, 1e-3 * e * e)).collect();
        let fit = fit_power(&table(&rows), None).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.log_intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn baseline_is_subtracted() {
        let rows: Vec<_> = DEFAULT_GRID.iter().map(|&e| (e, 5.0 + 3.0 * e * e, 1e-6)).collect();
        let fit = fit_power(&table(&rows), Some(5.0)).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-8);
    }

    #[test]
    fn noise_is_not_fitted() {
        let rows: Vec<_> = DEFAULT_GRID.iter().map(|&e| (e, e, e)).collect();
        assert!(matches!(fit_power(&table(&rows), None), Err(Error::InsufficientSignal { .. })));
    }

    #[test]
    fn verdict_gates() {
        let fit = |exponent, r_squared| PowerFit { exponent, log_intercept: 0.0, r_squared, rows_used: 5 };
        assert!(verdict(&fit(1.95, 0.99), 2.0, 0.15).unwrap());
        assert!(!verdict(&fit(1.0, 0.99), 2.0, 0.15).unwrap());
        assert!(!verdict(&fit(2.0, 0.5), 2.0, 0.15).unwrap());
        assert!(verdict_at_least(&fit(5.0, 0.99), 4.0, 0.15).unwrap());
        assert!(!verdict_at_least(&fit(3.0, 0.99), 4.0, 0.15).unwrap());
        assert!(verdict(&fit(2.0, 1.0), 2.0, 1.0).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&DEFAULT_GRID, false).is_ok());
        assert!(validate_grid(&[0.5, 0.35, 0.25], false).is_err());
        assert!(validate_grid(&[0.5, 0.45, 0.25, 0.125], false).is_err());
        assert!(validate_grid(&[0.25, 0.18, 0.125, 0.09], false).is_err());
        assert!(validate_grid(&[0.25, 0.18, 0.125, 0.09], true).is_ok());
    }

    #[test]
    fn growth_gate() {
        let flat = table(&[(0.5, 1.0, 0.01), (0.25, 1.5, 0.01), (0.125, 2.9, 0.01), (0.0625, 3.0, 0.01)]);
        let g = growth_per_halving(&flat).unwrap();
        assert!((g - 2.9 / 1.5).abs() < 1e-12);
        assert!((final_growth_per_halving(&flat).unwrap() - 3.0 / 2.9).abs() < 1e-12);
        // settles after a transient, so it counts as bounded
        let v = judge("L3", &flat, Gate::Bounded, 0.0, 0.15).unwrap();
        assert_eq!(v.pass, Some(true));
        let rows: Vec<(f64, f64, f64)> = [0.5, 0.35, 0.25, 0.18, 0.125].iter().map(|&e: &f64| (e, e.powf(-0.5), 1e-3)).collect();
        let blowup = table(&rows);
        assert!((final_growth_per_halving(&blowup).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(judge("L3", &blowup, Gate::Bounded, 0.0, 0.15).unwrap().pass, Some(false));
    }
}
