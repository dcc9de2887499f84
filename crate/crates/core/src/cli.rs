//! Config-driven task runner.
//!
//! A run is described by a TOML file whose keys mirror [`RunConfig`]; command
//! line flags override individual keys. Every run writes `report.json` and
//! `report.csv` into the output directory. Exit codes: 0 all checks pass, 1
//! numerical failure or failed checks, 2 configuration error, 3 I/O error.
//!
//! ```toml
//! task = "theorem1"
//! seed = 7
//!
//! [manifold]
//! id = "kodaira_thurston"
//! grid = 8
//!
//! [theorem1]
//! cutoff = 2
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checks::{self, CheckTable};
use crate::elliptic::{Elliptic, EllipticSolveConfig};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::FormField;
use crate::frame_calculus as fc;
use crate::geometry::{build_manifold, CatalogId};
use crate::grid::GridSpec;
use crate::hilbert::{self, AssemblyConfig, OperatorId, PipelineConfig};
use crate::local_domain::{self, BallCutoff, BoxDomain, Chart, Weight, WeightedField};
use crate::{io, ManifoldSpec64};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "DTILDE_OUTPUT";
pub const REPORT_SCHEMA: &str = "dtilde.report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Verify,
    Spectrum,
    SolveW,
    Theorem1,
    Local,
    Coefficients,
}

impl Task {
    fn as_str(self) -> &'static str {
        match self {
            Task::Verify => "verify",
            Task::Spectrum => "spectrum",
            Task::SolveW => "solve-w",
            Task::Theorem1 => "theorem1",
            Task::Local => "local",
            Task::Coefficients => "coefficients",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub id: CatalogId,
    /// Resolution per active axis; `kodaira_thurston` uses the z-invariant sector.
    pub grid: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self { id: CatalogId::FlatTorusKahler, grid: 8, params: BTreeMap::new() }
    }
}

impl ManifoldConfig {
    pub fn grid_spec(&self) -> GridSpec {
        match self.id {
            CatalogId::KodairaThurston => GridSpec::z_invariant(self.grid),
            _ => GridSpec::cube(self.grid),
        }
    }

    pub fn build(&self) -> Result<ManifoldSpec64> {
        build_manifold(self.id, &self.grid_spec(), &self.params)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub identity_tol: f64,
    pub band: usize,
    /// Random 1-forms for the `d⁺` split.
    pub split_samples: usize,
    /// Random functions for the Kähler and contract checks.
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { identity_tol: 1e-8, band: 3, split_samples: 100, samples: 3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub operator: String,
    pub cutoffs: Vec<usize>,
    /// Adds the harmonic 1-forms to the estimate space.
    pub widen_harmonic: bool,
    pub ahs: bool,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { operator: "w_tilde".into(), cutoffs: vec![1, 2], widen_harmonic: false, ahs: false }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveWConfig {
    /// Expression for `f` (see [`crate::expr`]).
    pub f: Option<String>,
    /// Scalar sidecar holding `f`.
    pub f_file: Option<PathBuf>,
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub cutoff: usize,
    /// Band of the random 1-form made admissible as input (default: `cutoff`).
    pub band: Option<usize>,
    /// Residual tolerance relative to `‖da‖`.
    pub tol: f64,
    pub admissibility_tol: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { cutoff: p.cutoff, band: None, tol: 1e-6, admissibility_tol: p.admissibility_tol, solver_tol: p.solver_tol, max_iter: p.max_iter }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub chart: Chart,
    pub half_width: f64,
    pub cells: usize,
    pub order: usize,
    /// `φ = scale·|x|²`; chosen automatically when absent.
    pub weight_scale: Option<f64>,
    pub modes: usize,
    pub kmax: f64,
    /// Ball cutoff radius for compactly supported `u`.
    pub cutoff_radius: Option<f64>,
    pub cutoff_power: i32,
    pub tol: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            chart: Chart::Flat,
            half_width: 1.0,
            cells: 4,
            order: 6,
            weight_scale: None,
            modes: 3,
            kmax: 2.0,
            cutoff_radius: Some(0.9),
            cutoff_power: 4,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub at: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub manifold: ManifoldConfig,
    #[serde(default)]
    pub elliptic: EllipticSolveConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub solve_w: SolveWConfig,
    #[serde(default)]
    pub theorem1: Theorem1Config,
    #[serde(default)]
    pub local: LocalConfig,
    #[serde(default)]
    pub coefficients: CoefficientsConfig,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        toml::from_str(&format!("task = \"{}\"", task.as_str())).expect("defaults parse")
    }

    /// Parses TOML; errors point at the offending key or line.
    pub fn parse(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let key = e
                .span()
                .map(|s| {
                    let start = src[..s.start].rfind('\n').map(|i| i + 1).unwrap_or(0);
                    let end = src[s.start..].find('\n').map(|i| s.start + i).unwrap_or(src.len());
                    src[start..end].trim().to_string()
                })
                .unwrap_or_default();
            Error::Config { key, message: e.message().to_string() }
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.output {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dtilde-out"));
                root.join(format!("{}-{}", self.task.as_str(), self.manifold.id.as_str()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if self.threads == 0 {
            return cfg_err("threads", "must be at least 1".into());
        }
        if let Err(e) = self.manifold.grid_spec().validate() {
            return cfg_err("manifold.grid", e.to_string());
        }
        if let Err(e) = self.elliptic.validate() {
            return cfg_err("elliptic", e.to_string());
        }
        if self.task == Task::Spectrum {
            if let Err(e) = OperatorId::parse(&self.spectrum.operator) {
                return cfg_err("spectrum.operator", e.to_string());
            }
            if self.spectrum.cutoffs.is_empty() {
                return cfg_err("spectrum.cutoffs", "needs at least one cutoff".into());
            }
        }
        if self.task == Task::SolveW && self.solve_w.f.is_some() == self.solve_w.f_file.is_some() {
            return cfg_err("solve_w.f", "give exactly one of `f` and `f_file`".into());
        }
        if let Some(e) = &self.solve_w.f {
            if let Err(err) = Expr::parse(e) {
                return cfg_err("solve_w.f", err.to_string());
            }
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "dtilde", version, about = "W, W̃ and D̃ operators and L² estimate diagnostics on almost-complex 4-manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub task: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Identity, Kähler, contract, Lejmi and Chern checks.
    Verify(Common),
    /// Singular value gaps and estimate constants of truncated complexes.
    Spectrum(Common),
    /// Correction forms and `W`, `W̃`, `D̃` for a given `f`.
    SolveW(SolveWArgs),
    /// Solve `D̃f = da` for an admissible `a` by both routes.
    Theorem1(Common),
    /// Weighted estimate term table on a coordinate box.
    Local(Common),
    /// Frame structure coefficients, Nijenhuis tensor and Chern connection.
    Coefficients(CoefficientsArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifold: Option<CatalogId>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Perturbation amplitude for `torus_perturbed`.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (default: `$DTILDE_OUTPUT/<task>-<manifold>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveWArgs {
    #[command(flatten)]
    pub common: Common,
    /// Expression for `f`, e.g. `sin(x) + 0.5*cos(t + 2*y)`.
    #[arg(long)]
    pub f: Option<String>,
    /// Scalar sidecar file holding `f`.
    #[arg(long)]
    pub f_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CoefficientsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Print every coefficient at the grid point nearest `t,x,y,z` as JSON.
    #[arg(long, value_parser = parse_point)]
    pub at: Option<[f64; 4]>,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"))).collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected four comma-separated coordinates".to_string())
}

impl clap::ValueEnum for CatalogId {
    fn value_variants<'a>() -> &'a [Self] {
        &[CatalogId::FlatTorusKahler, CatalogId::TorusPerturbed, CatalogId::KodairaThurston]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

/// Builds the run configuration from the subcommand, its config file and flags.
pub fn resolve(cmd: &Command) -> Result<RunConfig> {
    let (task, common) = match cmd {
        Command::Verify(c) => (Task::Verify, c),
        Command::Spectrum(c) => (Task::Spectrum, c),
        Command::SolveW(a) => (Task::SolveW, &a.common),
        Command::Theorem1(c) => (Task::Theorem1, c),
        Command::Local(c) => (Task::Local, c),
        Command::Coefficients(a) => (Task::Coefficients, &a.common),
    };
    let mut cfg = match &common.config {
        Some(p) => {
            let src = fs::read_to_string(p)?;
            let cfg = RunConfig::parse(&src)?;
            if cfg.task != task {
                return Err(Error::Config { key: "task".into(), message: format!("config is for `{}`, not `{}`", cfg.task.as_str(), task.as_str()) });
            }
            cfg
        }
        None => RunConfig::new(task),
    };
    if let Some(m) = common.manifold {
        cfg.manifold.id = m;
    }
    if let Some(g) = common.grid {
        cfg.manifold.grid = g;
    }
    if let Some(e) = common.epsilon {
        cfg.manifold.params.insert("epsilon".into(), e);
    }
    if let Some(k) = common.cutoff {
        cfg.theorem1.cutoff = k;
        cfg.spectrum.cutoffs = vec![k];
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
    match cmd {
        Command::SolveW(a) => {
            if a.f.is_some() || a.f_file.is_some() {
                cfg.solve_w.f = a.f.clone();
                cfg.solve_w.f_file = a.f_file.clone();
            }
        }
        Command::Coefficients(a) => {
            if a.at.is_some() {
                cfg.coefficients.at = a.at;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Outcome of a task before it is written out.
pub struct TaskOutput {
    pub checks: CheckTable,
    pub results: Value,
    pub timings: BTreeMap<String, f64>,
    /// Extra text for stdout (the `--at` JSON).
    pub stdout: Option<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    schema: &'static str,
    version: &'static str,
    task: &'static str,
    config_hash: String,
    config: &'a RunConfig,
    passed: bool,
    failures: Vec<String>,
    checks: &'a CheckTable,
    results: &'a Value,
    timings: &'a BTreeMap<String, f64>,
}

/// Runs the task and writes `report.json`/`report.csv`; returns the output and its directory.
pub fn run(cfg: &RunConfig) -> Result<(TaskOutput, PathBuf)> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let clock = Instant::now();
    let mut out = match cfg.task {
        Task::Verify => run_verify(cfg)?,
        Task::Spectrum => run_spectrum(cfg)?,
        Task::SolveW => run_solve_w(cfg, &dir)?,
        Task::Theorem1 => run_theorem1(cfg)?,
        Task::Local => run_local(cfg)?,
        Task::Coefficients => run_coefficients(cfg, &dir)?,
    };
    out.timings.insert("total".into(), clock.elapsed().as_secs_f64());
    let report = Report {
        schema: REPORT_SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        task: cfg.task.as_str(),
        config_hash: cfg.hash(),
        config: cfg,
        passed: out.checks.passed(),
        failures: out.checks.failures().iter().map(|r| r.name.clone()).collect(),
        checks: &out.checks,
        results: &out.results,
        timings: &out.timings,
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(dir.join("report.csv"), out.checks.to_csv())?;
    Ok((out, dir))
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Expr { .. } | Error::InvalidParameter(_) | Error::InvalidGrid(_) | Error::UnknownManifold(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::Json(_) => 3,
        _ => 1,
    }
}

fn timed<R>(timings: &mut BTreeMap<String, f64>, key: &str, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let r = f();
    timings.insert(key.into(), t.elapsed().as_secs_f64());
    r
}

fn context<'a>(spec: &'a ManifoldSpec64, cfg: &RunConfig) -> Result<Elliptic<'a, f64>> {
    Elliptic::new(spec, cfg.elliptic)
}

fn run_verify(cfg: &RunConfig) -> Result<TaskOutput> {
    let mut timings = BTreeMap::new();
    let spec = timed(&mut timings, "build", || cfg.manifold.build())?;
    let v = &cfg.verify;
    let mut checks = CheckTable::default();
    let ids = timed(&mut timings, "identities", || checks::identity_suite(&spec, cfg.seed, v.band, v.identity_tol));
    checks.extend("identity.", ids);
    let split = timed(&mut timings, "dplus_split", || checks::dplus_split_suite(&spec, cfg.seed + 1, v.split_samples, v.band));
    checks.push("identity.dplus_split", split, 1e-10);
    let ctx = context(&spec, cfg)?;
    if spec.integrable {
        let k = timed(&mut timings, "kahler", || checks::kahler_suite(&ctx, cfg.seed + 2, v.samples, v.band))?;
        checks.extend("kahler.", k);
    } else {
        let c = timed(&mut timings, "contracts", || checks::contract_suite(&ctx, cfg.seed + 2, v.samples, v.band.min(2)))?;
        checks.extend("contract.", c);
    }
    checks.extend("lejmi.", timed(&mut timings, "lejmi", || checks::lejmi_suite(&spec, cfg.seed + 3, v.band)));
    checks.extend("chern.", timed(&mut timings, "chern", || checks::chern_suite(&spec))?);
    let results = json!({ "manifold": spec.name(), "grid": spec.grid.shape() });
    Ok(TaskOutput { checks, results, timings, stdout: None })
}

fn run_spectrum(cfg: &RunConfig) -> Result<TaskOutput> {
    let mut timings = BTreeMap::new();
    let spec = cfg.manifold.build()?;
    let ctx = context(&spec, cfg)?;
    let op = OperatorId::parse(&cfg.spectrum.operator)?;
    let acfg = AssemblyConfig { threads: cfg.threads, ..Default::default() };
    let mut checks = CheckTable::default();
    let mut rows = Vec::new();
    let extra = if cfg.spectrum.widen_harmonic { hilbert::harmonic_one_forms(&spec, cfg.elliptic.options())? } else { Vec::new() };
    for &k in &cfg.spectrum.cutoffs {
        let cx = timed(&mut timings, &format!("assemble_k{k}"), || hilbert::assemble(&ctx, op, k, &[], acfg))?;
        let c = cx.best_constant()?;
        checks.push(format!("k{k}.st_norm"), cx.st_norm, 1e-6);
        checks.push(format!("k{k}.gram_residual"), cx.gram_residual, 1e-8);
        checks.push(format!("k{k}.projection_defect"), cx.projection_defect, 1e-8);
        let mut row = json!({
            "cutoff": k,
            "constant": c.constant,
            "sum_of_norms_bracket": [c.sum_of_norms_lower, c.sum_of_norms_upper],
            "lambda_min": c.lambda_min,
            "gap": hilbert::gap_row(k, &cx.t),
            "dims": [cx.h1.len(), cx.h2.len(), cx.h3.len()],
        });
        if !extra.is_empty() {
            let wide = hilbert::assemble(&ctx, op, k, &extra, acfg)?;
            let cw = wide.best_constant()?;
            row["widened_constant"] = json!(if cw.constant.is_finite() { Some(cw.constant) } else { None });
            let ratio = cw.constant / c.constant;
            checks.info(format!("k{k}.widening_ratio"), if ratio.is_finite() { ratio } else { f64::MAX });
        }
        rows.push(row);
    }
    let mut results = json!({ "manifold": spec.name(), "operator": cfg.spectrum.operator, "grid": spec.grid.shape(), "rows": rows });
    if cfg.spectrum.ahs {
        let rep = timed(&mut timings, "ahs", || hilbert::ahs_constant(&spec, *cfg.spectrum.cutoffs.last().unwrap()))?;
        results["ahs"] = serde_json::to_value(&rep)?;
    }
    Ok(TaskOutput { checks, results, timings, stdout: None })
}

fn run_solve_w(cfg: &RunConfig, dir: &Path) -> Result<TaskOutput> {
    let mut timings = BTreeMap::new();
    let spec = cfg.manifold.build()?;
    let ctx = context(&spec, cfg)?;
    let f = match (&cfg.solve_w.f, &cfg.solve_w.f_file) {
        (Some(e), _) => Expr::parse(e)?.sample(&spec.grid)?,
        (None, Some(p)) => io::read_scalar(p, spec.grid.shape())?,
        (None, None) => unreachable!("validated"),
    };
    let f = spec.remove_mean(&f);
    let b = timed(&mut timings, "bundle", || ctx.bundle(&f))?;
    let shape = spec.grid.shape();
    let fields = dir.join("fields");
    fs::create_dir_all(&fields)?;
    io::write_sidecar(&fields.join("f.bin"), &shape, &b.f)?;
    for (name, a) in [("sigma1", &b.sigma1), ("sigma2", &b.sigma2), ("w", &b.w), ("w_tilde", &b.w_tilde), ("d_tilde", &b.d_tilde)] {
        io::write_form(&fields.join(format!("{name}.bin")), shape, a)?;
    }
    let tol = cfg.solve_w.tol.unwrap_or(1e-8);
    let mut checks = CheckTable::default();
    for (k, v) in &b.diagnostics {
        if k.starts_with("norm_") || k.contains("iterations") {
            checks.info(k.clone(), *v);
        } else {
            checks.push(k.clone(), *v, tol);
        }
    }
    let results = json!({ "manifold": spec.name(), "grid": shape, "fields": "fields/", "diagnostics": b.diagnostics });
    Ok(TaskOutput { checks, results, timings, stdout: None })
}

fn run_theorem1(cfg: &RunConfig) -> Result<TaskOutput> {
    let mut timings = BTreeMap::new();
    let spec = cfg.manifold.build()?;
    let ctx = context(&spec, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = &cfg.theorem1;
    let band = t.band.unwrap_or(t.cutoff);
    let raw = FormField::random(&spec.grid, &mut rng, 1, band);
    let a = timed(&mut timings, "admissible_input", || hilbert::admissible_one_form(&ctx, &raw))?;
    let pcfg = PipelineConfig {
        cutoff: t.cutoff,
        admissibility_tol: t.admissibility_tol,
        solver_tol: t.solver_tol,
        max_iter: t.max_iter,
        threads: cfg.threads,
        ..Default::default()
    };
    let rep = hilbert::theorem1_pipeline(&ctx, &a, pcfg)?;
    timings.extend(rep.timings.iter().map(|(k, v)| (format!("pipeline.{k}"), *v)));
    let tol = t.tol;
    let mut checks = CheckTable::default();
    for k in ["hormander_route", "direct_route", "routes_agree"] {
        checks.push(k, rep.residuals[k], tol);
    }
    checks.push("d_minus_a", rep.residuals["d_minus_a"], pcfg.admissibility_tol);
    checks.push_at_least("bound_holds", rep.bound_holds as u8 as f64, 1.0);
    let mut results = serde_json::to_value(&rep)?;
    if let Some(o) = results.as_object_mut() {
        o.remove("timings");
    }
    Ok(TaskOutput { checks, results, timings, stdout: None })
}

fn run_local(cfg: &RunConfig) -> Result<TaskOutput> {
    let mut timings = BTreeMap::new();
    let l = &cfg.local;
    let dom = match l.weight_scale {
        Some(s) => BoxDomain::new(l.chart, [-l.half_width; 4], [l.half_width; 4], l.cells, l.order, Weight { scale: s, center: [0.0; 4] })?,
        None => BoxDomain::centered(l.chart, l.half_width, l.cells, l.order)?,
    };
    let cutoff = l.cutoff_radius.map(|r| BallCutoff { center: [0.0; 4], radius: r, power: l.cutoff_power });
    let field = WeightedField::random(&mut ChaCha8Rng::seed_from_u64(cfg.seed), l.modes, l.kmax, cutoff);
    let rep = timed(&mut timings, "report", || local_domain::local_estimate_report(&dom, &field, cfg.threads))?;
    let mut checks = CheckTable::default();
    checks.push("equality_residual", rep.equality_residual, l.tol);
    checks.push("ibp_residual", rep.ibp_residual, l.tol);
    checks.push_at_least("inequality_slack", rep.inequality_slack, -1e-8 * rep.lhs.abs().max(1.0));
    checks.push_at_least("psh_margin", rep.psh_margin, f64::MIN_POSITIVE);
    checks.push("dr_defect", rep.dr_defect, 1e-6);
    checks.push("expansion_deviation", rep.max_expansion_deviation, 1e-9 * rep.lhs.abs().sqrt().max(1.0));
    checks.info("lhs", rep.lhs);
    checks.info("rhs", rep.rhs);
    for t in &rep.terms {
        checks.info(t.name.clone(), t.value);
    }
    checks.info("underresolved", rep.underresolved as u8 as f64);
    let results = serde_json::to_value(&rep)?;
    Ok(TaskOutput { checks, results, timings, stdout: None })
}

fn run_coefficients(cfg: &RunConfig, dir: &Path) -> Result<TaskOutput> {
    let mut timings = BTreeMap::new();
    let spec = cfg.manifold.build()?;
    let fr = spec.unitary_frame()?;
    let sc = timed(&mut timings, "structure", || fc::structure_coefficients(&spec, &fr));
    let gamma = timed(&mut timings, "chern", || fc::chern_gamma(&spec, &fr, &sc, &spec.metric))?;
    let nij = fc::nijenhuis(&spec);
    let n = spec.npts();
    let mut cdata = Vec::with_capacity(n * 128);
    for d in &sc.data {
        for z in d.iter().flatten().flatten() {
            cdata.extend([z.re, z.im]);
        }
    }
    let fields = dir.join("fields");
    fs::create_dir_all(&fields)?;
    io::write_sidecar(&fields.join("structure.bin"), &[n, 4, 4, 4, 2], &cdata)?;
    let gdata: Vec<f64> = gamma.iter().flat_map(|g| g.iter().flatten().flatten().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>()).collect();
    io::write_sidecar(&fields.join("chern_gamma.bin"), &[n, 2, 2, 2, 2], &gdata)?;
    io::export_manifold(&spec, &dir.join("manifold"))?;
    let nmax = nij.iter().flatten().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut checks = CheckTable::default();
    checks.push("frame_duality", fr.duality_residual(), 1e-12);
    checks.info("structure_max", sc.max_abs());
    checks.info("nijenhuis_max", nmax);
    if spec.integrable {
        checks.push("nijenhuis_integrable", nmax, 1e-10);
    }
    let stdout = cfg.coefficients.at.map(|x| {
        let p = nearest_point(&spec, x);
        let c = |z: num_complex::Complex<f64>| [z.re, z.im];
        let structure: Vec<Vec<Vec<[f64; 2]>>> = sc.data[p].iter().map(|s| s.iter().map(|r| r.iter().map(|z| c(*z)).collect()).collect()).collect();
        let gamma_p: Vec<Vec<Vec<[f64; 2]>>> = gamma[p].iter().map(|s| s.iter().map(|r| r.iter().map(|z| c(*z)).collect()).collect()).collect();
        let nij_p: Vec<Vec<Vec<f64>>> = nij.iter().map(|a| a.iter().map(|b| b.iter().map(|v| v[p]).collect()).collect()).collect();
        let v = json!({
            "point": spec.grid.coords(p),
            "index": p,
            "j": spec.j_at(p),
            "metric": spec.metric_at(p),
            "structure": structure,
            "divergence": [c(sc.div[0][p]), c(sc.div[1][p])],
            "chern_gamma": gamma_p,
            "nijenhuis": nij_p,
        });
        serde_json::to_string_pretty(&v).expect("json")
    });
    let results = json!({ "manifold": spec.name(), "grid": spec.grid.shape(), "fields": "fields/", "manifold_document": "manifold/manifold.json" });
    Ok(TaskOutput { checks, results, timings, stdout })
}

/// Grid point nearest `x` (periodic in every active direction).
fn nearest_point(spec: &ManifoldSpec64, x: [f64; 4]) -> usize {
    let g = spec.grid.spec();
    let shape = spec.grid.shape();
    let mi: [usize; 4] = std::array::from_fn(|m| {
        let n = shape[m] as f64;
        let i = (x[m] / g.period[m] * n).round().rem_euclid(n);
        i as usize % shape[m]
    });
    spec.grid.flat_index(mi)
}

/// Entry point used by the binary: returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let cfg = match resolve(&cli.task) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match run(&cfg) {
        Ok((out, dir)) => {
            if let Some(s) = &out.stdout {
                println!("{s}");
            }
            let failed = out.checks.failures();
            if failed.is_empty() {
                eprintln!("{}: all {} checks passed; report in {}", cfg.task.as_str(), out.checks.rows.len(), dir.display());
                0
            } else {
                for r in &failed {
                    eprintln!("FAILED {}: {:e} (tolerance {:e})", r.name, r.value, r.tolerance);
                }
                eprintln!("{}: {} of {} checks failed; report in {}", cfg.task.as_str(), failed.len(), out.checks.rows.len(), dir.display());
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
