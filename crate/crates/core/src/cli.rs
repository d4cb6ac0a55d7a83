//! Configuration and command implementations behind the `hfrac` binary.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 a lemma gate
//! failed or was inconclusive, 3 solver non-convergence, 4 `λ` outside
//! `(0, λ₁)`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::asympt::{self, Gate, Quantity, SweepContext, DEFAULT_GRID};
use crate::bubble::BubbleSpec;
use crate::error::{Error, Result};
use crate::hgroup::{critical_exponent, GroupParams};
use crate::quad::{Estimate, Method, QuadratureSpec, Region};
use crate::varsolve::{self, DiscreteDomain, DiscreteField, SolverConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_HYPOTHESIS: i32 = 4;

/// Lemma labels accepted by `--only`.
pub const LEMMA_LABELS: [&str; 7] = ["L3", "L4", "L5", "L6", "L7a", "L7b", "drop"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub n_dim: usize,
    pub s: f64,
    /// `λ`; when absent, commands that need it use `0.5·λ̂₁`.
    pub lambda: Option<f64>,
    pub eps_grid: Vec<f64>,
    /// Bubble width over cutoff radius at relative ε = 1.
    pub eps_scale: f64,
    pub allow_small_eps: bool,
    /// Cutoff radius `r`.
    pub r: f64,
    /// Radius of `Ω = B_R`.
    pub radius: f64,
    /// Cloud size for eigen and solve.
    pub n: usize,
    /// Cloud sizes of the eigen refinement table.
    pub refinement: Vec<usize>,
    pub samples: u64,
    pub sup_samples: usize,
    pub annuli: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub eigen_tol: f64,
    pub solve_tol: f64,
    pub max_iter: usize,
    pub tol_rel: f64,
    /// Gradient-oracle directions for `solve`.
    pub directions: usize,
    pub only: Option<String>,
    /// Precomputed bubble document; computed on the fly when absent.
    pub bubble: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_dim: 1,
            s: 0.25,
            lambda: None,
            eps_grid: DEFAULT_GRID.to_vec(),
            eps_scale: crate::bubble::DEFAULT_EPS_SCALE,
            allow_small_eps: false,
            r: 1.0,
            radius: 4.0,
            n: 4000,
            refinement: vec![1000, 2000, 4000],
            samples: 1_000_000,
            sup_samples: 100_000,
            annuli: 8,
            seed: 0,
            out: PathBuf::from("out"),
            eigen_tol: 1e-8,
            solve_tol: 1e-7,
            max_iter: 2000,
            tol_rel: asympt::DEFAULT_TOL_REL,
            directions: 100,
            only: None,
            bubble: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn params(&self) -> Result<GroupParams> {
        critical_exponent(self.n_dim, self.s)
    }

    /// Checks every parameter range; no computation happens before this passes.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        let positive = [
            ("eps-scale", self.eps_scale),
            ("r", self.r),
            ("radius", self.radius),
            ("eigen-tol", self.eigen_tol),
            ("solve-tol", self.solve_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be nonnegative, got {l}")));
            }
        }
        if self.radius < 2.0 * self.r {
            return Err(Error::invalid("the domain must contain the cutoff support B_{2r}"));
        }
        for &n in self.refinement.iter().chain(std::iter::once(&self.n)) {
            if n < varsolve::MIN_POINTS {
                return Err(Error::invalid(format!("cloud size must be at least {}, got {n}", varsolve::MIN_POINTS)));
            }
        }
        if self.refinement.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("refinement sizes must increase"));
        }
        if self.max_iter == 0 || self.directions == 0 || self.sup_samples < 2 {
            return Err(Error::invalid("max-iter, directions and sup-samples must be positive"));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel < 1.0) {
            return Err(Error::invalid("tol-rel must lie in (0, 1)"));
        }
        asympt::validate_grid(&self.eps_grid, self.allow_small_eps)?;
        self.quad()?;
        if let Some(only) = &self.only {
            if !LEMMA_LABELS.contains(&only.as_str()) {
                return Err(Error::invalid(format!("unknown lemma label {only}; expected one of {LEMMA_LABELS:?}")));
            }
        }
        Ok(())
    }

    pub fn quad(&self) -> Result<QuadratureSpec> {
        QuadratureSpec::new(Method::MonteCarloStratified, self.samples, self.annuli, self.seed, Region::FullSpace)
    }

    /// Digest of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out");
        }
        let text = serde_json::to_string(&v).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    fn meta(&self) -> Vec<(&'static str, String)> {
        vec![("config-hash", self.hash()), ("seed", self.seed.to_string()), ("version", VERSION.to_string())]
    }
}

#[derive(Debug, Parser)]
#[command(name = "hfrac", version, about = "Fractional Brezis–Nirenberg numerics on the Heisenberg group")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// κ, Ŝ and σ with standard errors, plus the bubble document.
    Constants,
    /// First eigenpair on Ω with a refinement table.
    Eigen,
    /// Lemma sweeps, fits and verdicts.
    Lemmas,
    /// Constrained minimization and the rescaled weak solution.
    Solve,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo sample budget.
    #[arg(long, global = true)]
    pub samples: Option<u64>,
    /// Point-cloud size.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Fractional order in (0, 1).
    #[arg(long, global = true)]
    pub s: Option<f64>,
    /// Spectral parameter λ.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Run a single lemma (L3, L4, L5, L6, L7a, L7b or drop).
    #[arg(long, global = true)]
    pub only: Option<String>,
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::from_json(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = &flags.out {
        cfg.out = v.clone();
    }
    if let Some(v) = flags.samples {
        cfg.samples = v;
    }
    if let Some(v) = flags.n {
        cfg.n = v;
    }
    if let Some(v) = flags.s {
        cfg.s = v;
    }
    if let Some(v) = flags.lambda {
        cfg.lambda = Some(v);
    }
    if let Some(v) = &flags.only {
        cfg.only = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Outcome of a command: the main JSON document and the exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub code: i32,
}

fn stamp(cfg: &RunConfig, mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.insert("config-hash".into(), json!(cfg.hash()));
        o.insert("seed".into(), json!(cfg.seed));
        o.insert("version".into(), json!(VERSION));
    }
    v
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    // serde_json maps are ordered by key, so output keys are sorted
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn estimate_json(e: &Estimate) -> Value {
    json!({ "value": e.value, "stderr": e.stderr, "samples": e.samples_used })
}

fn load_or_calibrate(cfg: &RunConfig) -> Result<(BubbleSpec, Estimate)> {
    let gp = cfg.params()?;
    if let Some(path) = &cfg.bubble {
        let mut spec = BubbleSpec::from_json(&fs::read_to_string(path)?)?;
        if spec.params != gp {
            return Err(Error::invalid("the bubble document was computed for different N or s"));
        }
        spec.r = cfg.r;
        let s_hat = Estimate { value: spec.provenance.s_hat, stderr: spec.provenance.s_hat_stderr, samples_used: spec.provenance.samples };
        return Ok((spec, s_hat));
    }
    let (mut spec, _, s_hat) = asympt::calibrate(gp, cfg.r, &cfg.quad()?)?;
    spec.provenance.config_hash = cfg.hash();
    Ok((spec, s_hat))
}

pub fn cmd_constants(cfg: &RunConfig) -> Result<Outcome> {
    let gp = cfg.params()?;
    let qs = cfg.quad()?;
    let (mut spec, kappa, s_hat) = asympt::calibrate(gp, cfg.r, &qs)?;
    spec.provenance.config_hash = cfg.hash();
    let sigma = s_hat.powf(1.0 / (2.0 * gp.s));
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("bubble.json"), spec.to_json()? + "\n")?;
    let report = stamp(
        cfg,
        json!({
            "command": "constants",
            "N": gp.n,
            "s": gp.s,
            "Q": gp.q,
            "q-star": gp.q_star,
            "kappa": estimate_json(&kappa),
            "s-hat": estimate_json(&s_hat),
            "sigma": estimate_json(&sigma),
            "spec-hash": qs.spec_hash(),
        }),
    );
    write_json(&cfg.out.join("constants.json"), &report)?;
    Ok(Outcome { report, code: EXIT_OK })
}

struct EigenRun {
    dom: DiscreteDomain,
    form: varsolve::QuadraticForm,
    result: std::result::Result<varsolve::SpectralResult, Error>,
}

fn eigen_run(cfg: &RunConfig, n: usize) -> Result<EigenRun> {
    let gp = cfg.params()?;
    let dom = varsolve::build_domain(cfg.radius, n, &gp, cfg.seed)?;
    let form = varsolve::assemble_form(&dom, &gp)?;
    let solver = SolverConfig { tol: cfg.eigen_tol, max_iter: cfg.max_iter, seed: cfg.seed };
    let result = varsolve::smallest_eigenpair_with(&form, &dom, &solver);
    Ok(EigenRun { dom, form, result })
}

/// Sign changes of the eigenvector, counted as entries of the minority sign.
fn sign_defects(u: &DiscreteField) -> usize {
    let neg = u.values.iter().filter(|v| **v < 0.0).count();
    neg.min(u.len() - neg)
}

pub fn cmd_eigen(cfg: &RunConfig) -> Result<Outcome> {
    let mut sizes = cfg.refinement.clone();
    if !sizes.contains(&cfg.n) {
        sizes.push(cfg.n);
        sizes.sort_unstable();
    }
    fs::create_dir_all(&cfg.out)?;
    let mut table = Vec::new();
    let mut main = None;
    let mut prev: Option<f64> = None;
    let mut csv_rows = Vec::new();
    for &n in &sizes {
        let run = eigen_run(cfg, n)?;
        let sp = match &run.result {
            Ok(sp) => sp.clone(),
            Err(Error::Convergence { iterations, residual, best }) => {
                if let Some(b) = best {
                    DiscreteField::new((**b).clone()).write_to(fs::File::create(cfg.out.join("eigenvector-best.bin"))?)?;
                }
                let report = stamp(
                    cfg,
                    json!({ "command": "eigen", "error": "no convergence", "n": n, "iterations": iterations, "residual": residual }),
                );
                write_json(&cfg.out.join("eigen.json"), &report)?;
                return Ok(Outcome { report, code: EXIT_NO_CONVERGENCE });
            }
            Err(e) => return Err(Error::invalid(e.to_string())),
        };
        let delta = prev.map(|p| sp.eigenvalue - p);
        prev = Some(sp.eigenvalue);
        let row = json!({
            "n": n,
            "points": run.dom.len(),
            "h": run.dom.h,
            "lambda1": sp.eigenvalue,
            "residual": sp.residual,
            "iterations": sp.iterations,
            "delta": delta,
            "sign-defects": sign_defects(&sp.eigenvector),
        });
        csv_rows.push((n, run.dom.len(), run.dom.h, sp.eigenvalue, sp.residual, delta));
        table.push(row);
        if n == cfg.n {
            main = Some((run, sp));
        }
    }
    let deltas: Vec<f64> = csv_rows.iter().filter_map(|r| r.5.map(f64::abs)).collect();
    let shrinking = deltas.windows(2).all(|w| w[1] < w[0]);
    let (run, sp) = main.expect("main size is in the table");
    run.dom.write_to(fs::File::create(cfg.out.join("domain.bin"))?)?;
    sp.eigenvector.write_to(fs::File::create(cfg.out.join("eigenvector.bin"))?)?;
    let mut w = csv::Writer::from_path(cfg.out.join("refinement.csv"))?;
    w.write_record(["n", "points", "h", "lambda1", "residual", "delta", "config-hash", "seed", "version"])?;
    for (n, pts, h, l, r, d) in &csv_rows {
        let mut rec = vec![
            n.to_string(),
            pts.to_string(),
            format!("{h:e}"),
            format!("{l:e}"),
            format!("{r:e}"),
            d.map(|d| format!("{d:e}")).unwrap_or_default(),
        ];
        rec.extend(cfg.meta().into_iter().map(|m| m.1));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let report = stamp(
        cfg,
        json!({
            "command": "eigen",
            "lambda1": sp.eigenvalue,
            "residual": sp.residual,
            "tol": cfg.eigen_tol,
            "iterations": sp.iterations,
            "n": cfg.n,
            "points": run.dom.len(),
            "h": run.dom.h,
            "radius": cfg.radius,
            "sign-defects": sign_defects(&sp.eigenvector),
            "refinement": table,
            "deltas-shrink": shrinking,
        }),
    );
    write_json(&cfg.out.join("eigen.json"), &report)?;
    Ok(Outcome { report, code: EXIT_OK })
}

/// Label, swept quantity, gate and predicted exponent.
type LemmaStep = (&'static str, Quantity, Gate, fn(&GroupParams) -> f64);

fn lemma_plan() -> Vec<LemmaStep> {
    vec![
        ("L3", Quantity::SupRatio, Gate::Bounded, |_| 0.0),
        ("L4", Quantity::GradientSupRatio, Gate::Bounded, |_| 0.0),
        ("L5", Quantity::IncrementConstant, Gate::Bounded, |_| 0.0),
        ("L6", Quantity::SeminormExcess, Gate::TwoSided, |gp| gp.q_minus_2s()),
        ("L7a", Quantity::L2Norm, Gate::TwoSided, |gp| (2.0 * gp.s).min(gp.qf() - 4.0 * gp.s)),
        ("L7b", Quantity::CriticalCorrection, Gate::AtLeast, |gp| gp.qf()),
    ]
}

pub fn cmd_lemmas(cfg: &RunConfig) -> Result<Outcome> {
    let gp = cfg.params()?;
    let (spec, s_hat) = load_or_calibrate(cfg)?;
    let ctx = SweepContext {
        spec,
        quad: cfg.quad()?,
        sup_samples: cfg.sup_samples,
        eps_scale: cfg.eps_scale,
        lambda: 0.0,
        allow_small_eps: cfg.allow_small_eps,
    };
    let wanted = |label: &str| cfg.only.as_deref().is_none_or(|o| o == label);
    fs::create_dir_all(&cfg.out)?;
    let meta = cfg.meta();
    let mut verdicts = Vec::new();
    let mut all_pass = true;
    for (label, quantity, gate, predicted) in lemma_plan() {
        if !wanted(label) {
            continue;
        }
        let table = asympt::sweep(quantity, &cfg.eps_grid, &ctx)?;
        table.write_csv(fs::File::create(cfg.out.join(format!("sweep-{label}.csv")))?, &meta)?;
        let v = asympt::judge(label, &table, gate, predicted(&gp), cfg.tol_rel)?;
        all_pass &= v.is_pass();
        verdicts.push(serde_json::to_value(&v)?);
    }
    let mut drop = Value::Null;
    if wanted("drop") {
        let lambda = match cfg.lambda {
            Some(l) => l,
            None => {
                let run = eigen_run(cfg, cfg.n)?;
                0.5 * run.result.map_err(|e| Error::invalid(format!("eigen solve for λ failed: {e}")))?.eigenvalue
            }
        };
        let report = asympt::strict_drop_check(lambda, &cfg.eps_grid, &ctx, s_hat)?;
        if let Some(t) = &report.table {
            t.write_csv(fs::File::create(cfg.out.join("sweep-drop.csv"))?, &meta)?;
        }
        // λ = 0 skips the check without failing it
        if lambda > 0.0 {
            all_pass &= report.pass == Some(true);
        }
        let mut v = serde_json::to_value(&report)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("table");
            o.insert("lemma".into(), json!("drop"));
        }
        drop = v;
    }
    let report = stamp(
        cfg,
        json!({ "command": "lemmas", "verdicts": verdicts, "strict-drop": drop, "all-pass": all_pass }),
    );
    write_json(&cfg.out.join("verdicts.json"), &report)?;
    Ok(Outcome { report, code: if all_pass { EXIT_OK } else { EXIT_INCONCLUSIVE } })
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let gp = cfg.params()?;
    let run = eigen_run(cfg, cfg.n)?;
    let sp = match run.result {
        Ok(sp) => sp,
        Err(e @ Error::Convergence { .. }) => {
            let report = stamp(cfg, json!({ "command": "solve", "error": e.to_string() }));
            return Ok(Outcome { report, code: EXIT_NO_CONVERGENCE });
        }
        Err(e) => return Err(e),
    };
    let lambda = cfg.lambda.unwrap_or(0.5 * sp.eigenvalue);
    if !(lambda > 0.0 && lambda < sp.eigenvalue) {
        let report = stamp(
            cfg,
            json!({
                "command": "solve",
                "error": format!(
                    "a nontrivial solution is guaranteed only for 0 < lambda < lambda_1; got lambda = {lambda}, lambda_1 = {}",
                    sp.eigenvalue
                ),
                "lambda": lambda,
                "lambda1": sp.eigenvalue,
            }),
        );
        return Ok(Outcome { report, code: EXIT_HYPOTHESIS });
    }
    let (dom, form) = (run.dom, run.form);
    let r = dom.radius / 4.0;
    let start = varsolve::start_field(&dom, &gp, 0.25 * cfg.eps_scale * r, r)?;
    let solver = SolverConfig { tol: cfg.solve_tol, max_iter: cfg.max_iter, seed: cfg.seed };
    let min = match varsolve::minimize_quotient_from(&form, &dom, lambda, &start, &solver) {
        Ok(m) => m,
        Err(e @ (Error::Convergence { .. } | Error::Stagnation { .. })) => {
            let report = stamp(cfg, json!({ "command": "solve", "error": e.to_string(), "lambda": lambda }));
            return Ok(Outcome { report, code: EXIT_NO_CONVERGENCE });
        }
        Err(e) => return Err(e),
    };
    let c = min.value.powf(1.0 / (gp.q_star - 2.0));
    let v = DiscreteField::new(min.field.values.iter().map(|x| c * x).collect());
    let residual = varsolve::weak_residual(&v, lambda, &form, &dom)?;
    let energy = varsolve::energy(&v, lambda, &form, &dom)?;
    let oracle = varsolve::gradient_oracle(&v, lambda, &form, &dom, cfg.directions, cfg.seed)?;
    let lo = v.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_hat = load_or_calibrate(cfg)?.1;
    fs::create_dir_all(&cfg.out)?;
    dom.write_to(fs::File::create(cfg.out.join("domain.bin"))?)?;
    v.write_to(fs::File::create(cfg.out.join("solution.bin"))?)?;
    let report = stamp(
        cfg,
        json!({
            "command": "solve",
            "lambda": lambda,
            "lambda1": sp.eigenvalue,
            "quotient": min.value,
            "s-hat": estimate_json(&s_hat),
            "below-s-hat": min.value < s_hat.value,
            "weak-residual": residual,
            "energy": energy,
            "gradient-norm-fd": oracle.fd_gradient_norm,
            "gradient-norm": oracle.gradient_norm,
            "gradient-oracle-error": oracle.max_error,
            "min": lo,
            "max": hi,
            "all-positive": lo > 0.0,
            "iterations": min.iterations,
            "n": cfg.n,
            "points": dom.len(),
        }),
    );
    write_json(&cfg.out.join("solve.json"), &report)?;
    Ok(Outcome { report, code: EXIT_OK })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InsufficientSignal { .. } => EXIT_INCONCLUSIVE,
        Error::Convergence { .. } | Error::Stagnation { .. } => EXIT_NO_CONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Constants => cmd_constants(cfg),
        Command::Eigen => cmd_eigen(cfg),
        Command::Lemmas => cmd_lemmas(cfg),
        Command::Solve => cmd_solve(cfg),
    }
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match resolve_config(&cli.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match dispatch(cli.command, &cfg) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.report).unwrap_or_default());
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
