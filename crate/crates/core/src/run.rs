//! Command orchestration and the structured run report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::barriers::{
    barrier_fields, comparison_check, compute_barrier_constants, eval_barrier_pair, perron_envelope, verify_subsupersolution,
    BarrierParams, Role, VerifiedSub, VerifiedSuper,
};
use crate::config::{method_name, ConfigEcho, ProblemConfig};
use crate::dump::{write_field, FieldDump};
use crate::error::{Error, Result};
use crate::problem::{ProblemInstance, ADVISORY_AXIOMS, REQUIRED_AXIOMS};
use crate::report::{Entry, ValidationReport};
use crate::solver::{residuals, solve_family, Method, SolutionField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Solve,
    Barriers,
    Envelope,
    Compare,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Barriers => "barriers",
            Command::Envelope => "envelope",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub force: bool,
    pub tol: Option<f64>,
    pub method: Option<Method>,
    /// Field dumps for `compare`.
    pub sub: Option<PathBuf>,
    pub sup: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self { config: config.into(), out: out.into(), force: false, tol: None, method: None, sub: None, sup: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryOut {
    pub axiom: String,
    pub status: String,
    pub tier: String,
    pub margin: f64,
    pub violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_node: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub witness_modes: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub witness_location: Vec<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub witness_values: BTreeMap<String, f64>,
}

impl From<&Entry> for EntryOut {
    fn from(e: &Entry) -> Self {
        let tier = if REQUIRED_AXIOMS.contains(&e.axiom) {
            "required"
        } else if ADVISORY_AXIOMS.contains(&e.axiom) {
            "advisory"
        } else {
            "check"
        };
        let w = e.witness.clone().unwrap_or_default();
        Self {
            axiom: e.axiom.id().to_string(),
            status: if e.passed { "PASS" } else { "FAIL" }.to_string(),
            tier: tier.to_string(),
            margin: e.margin,
            violations: e.violations,
            note: e.note.clone(),
            witness_node: w.node,
            witness_modes: w.modes,
            witness_location: w.location,
            witness_values: w.values.into_iter().collect(),
        }
    }
}

fn entries(r: &ValidationReport) -> Vec<EntryOut> {
    r.entries.iter().map(EntryOut::from).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSection {
    pub passed: bool,
    pub strict: bool,
    pub entries: Vec<EntryOut>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSection {
    pub method: String,
    pub forced: bool,
    pub slices: usize,
    pub iterations_total: usize,
    pub iterations_max: usize,
    pub polish_sweeps: usize,
    pub max_update: f64,
    pub max_residual: f64,
    /// Most negative of either factor over interior nodes.
    pub min_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linf_error: Option<f64>,
    /// Contact nodes per mode.
    pub contact_nodes: Vec<usize>,
    pub diagnostics: Vec<String>,
    pub dump: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOut {
    pub node: usize,
    pub x_hat: Vec<f64>,
    pub b_tilde: f64,
    pub b: f64,
    pub kappa: f64,
    pub c: f64,
    pub r: f64,
    pub delta: f64,
    pub passes: usize,
    /// Worst margins over reference modes and `ε`.
    pub sub_margin: f64,
    pub super_margin: f64,
    /// Smallest `solution − U` and `V − solution` over compared nodes.
    pub lower_gap: f64,
    pub upper_gap: f64,
    /// Largest deviation of `V_i(0,x̂) − U_i(0,x̂)` from `2ε`.
    pub pinch_error: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierSection {
    pub passed: bool,
    pub tol: f64,
    pub eps: Vec<f64>,
    pub seeds: Vec<SeedOut>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeSection {
    pub passed: bool,
    pub seeds: usize,
    pub members: usize,
    pub excluded_by_cap: usize,
    pub excluded_unverified: usize,
    pub cap: f64,
    pub domination: EntryOut,
    pub gap_max: f64,
    pub gap_mean: f64,
    /// Largest gap at the seeds on the first interior slice.
    pub gap_first_slice_seeds: f64,
    pub dump: String,
    pub gap_dump: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSection {
    pub sub: String,
    pub sup: String,
    pub sub_checks: Vec<EntryOut>,
    pub super_checks: Vec<EntryOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<EntryOut>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvironmentSection {
    pub version: String,
    pub threads: usize,
    pub nodes: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSection>,
    pub environment: EnvironmentSection,
}

impl RunReport {
    fn new(cmd: Command) -> Self {
        Self {
            command: cmd.name().to_string(),
            status: "pass".into(),
            exit_code: 0,
            message: None,
            config: None,
            validation: None,
            solve: None,
            barrier: None,
            envelope: None,
            comparison: None,
            environment: EnvironmentSection {
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads: rayon::current_num_threads(),
                nodes: 0,
                wall_time: 0.0,
            },
        }
    }

    fn fail(&mut self, code: i32, message: impl Into<String>) {
        self.status = "fail".into();
        self.exit_code = self.exit_code.max(code);
        self.message.get_or_insert_with(|| message.into());
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    /// The report text without the timing-dependent environment section.
    pub fn deterministic_part(&self) -> String {
        let mut c = self.clone();
        c.environment.wall_time = 0.0;
        c.environment.threads = 0;
        c.to_toml()
    }
}

fn validation_section(problem: &ProblemInstance, cfg: &ProblemConfig) -> (ValidationSection, Result<()>) {
    let opts = cfg.validate_options();
    let report = problem.validate(&opts);
    let gate = ProblemInstance::gate(&report, opts.strict);
    (ValidationSection { passed: gate.is_ok(), strict: opts.strict, entries: entries(&report) }, gate)
}

fn solve_section(
    problem: &ProblemInstance,
    cfg: &ProblemConfig,
    field: &SolutionField,
    method: Method,
    forced: bool,
    dump: &Path,
) -> Result<SolveSection> {
    let m = problem.m();
    let grid = &problem.grid;
    let linf_error = match cfg.reference(grid, m)? {
        None => None,
        Some(exprs) => {
            let mut err = 0.0f64;
            for slice in grid.interior_slices() {
                for s in grid.closure_nodes() {
                    let node = grid.node(slice, s);
                    let x = grid.coords(s);
                    for (i, e) in exprs.iter().enumerate() {
                        err = err.max((field.value(node, i) - e.eval(grid.y(slice), &x)).abs());
                    }
                }
            }
            Some(err)
        }
    };
    let mut contact_nodes = vec![0; m];
    for (idx, &c) in field.contact.iter().enumerate() {
        if c {
            contact_nodes[idx % m] += 1;
        }
    }
    let min_factor = field.pde.iter().chain(&field.gap).copied().fold(0.0f64, f64::min);
    Ok(SolveSection {
        method: method_name(method).into(),
        forced,
        slices: field.meta.iterations.len(),
        iterations_total: field.meta.iterations.iter().sum(),
        iterations_max: field.meta.iterations.iter().copied().max().unwrap_or(0),
        polish_sweeps: field.meta.polish_sweeps,
        max_update: field.meta.max_update,
        max_residual: field.meta.max_residual,
        min_factor,
        delta0: field.delta0,
        linf_error,
        contact_nodes,
        diagnostics: field.diagnostics.clone(),
        dump: dump.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
    })
}

fn compared_nodes(problem: &ProblemInstance) -> Vec<usize> {
    let grid = &problem.grid;
    (0..grid.ny() - 1).flat_map(|slice| grid.closure_nodes().map(move |s| grid.node(slice, s))).collect()
}

fn barrier_section(problem: &ProblemInstance, cfg: &ProblemConfig, solution: &[f64]) -> Result<BarrierSection> {
    let grid = &problem.grid;
    let m = problem.m();
    let settings = cfg.barrier_settings()?;
    let seeds = cfg.seeds(grid)?;
    if seeds.is_empty() {
        return Err(Error::Barrier("empty barrier family".into()));
    }
    let tol = cfg.barrier.tol;
    let nodes = compared_nodes(problem);
    let mut out = Vec::new();
    for &x in &seeds {
        let k = compute_barrier_constants(problem, x, &settings)?;
        let mut so = SeedOut {
            node: x,
            x_hat: grid.coords(x),
            b_tilde: k.b_tilde,
            b: k.b,
            kappa: k.kappa,
            c: k.c,
            r: k.r,
            delta: k.delta,
            passes: k.passes,
            sub_margin: f64::INFINITY,
            super_margin: f64::INFINITY,
            lower_gap: f64::INFINITY,
            upper_gap: f64::INFINITY,
            pinch_error: 0.0,
            passed: true,
            notes: k.notes.clone(),
        };
        for &eps in &cfg.barrier.eps {
            for i in 0..m {
                let p = BarrierParams::new(&k, problem, i, eps)?;
                let (u, v) = barrier_fields(&p, problem);
                let su = verify_subsupersolution(problem, &u, Role::Sub, tol)?;
                let sv = verify_subsupersolution(problem, &v, Role::Super, tol)?;
                so.sub_margin = so.sub_margin.min(su.worst_margin());
                so.super_margin = so.super_margin.min(sv.worst_margin());
                so.passed &= su.passed() && sv.passed();
                for &node in &nodes {
                    for j in 0..m {
                        let idx = node * m + j;
                        so.lower_gap = so.lower_gap.min(solution[idx] - u[idx]);
                        so.upper_gap = so.upper_gap.min(v[idx] - solution[idx]);
                    }
                }
                let (u0, v0) = eval_barrier_pair(&p, problem, grid.node(0, x));
                so.pinch_error = so.pinch_error.max((v0[i] - u0[i] - 2.0 * eps).abs());
            }
        }
        so.passed &= so.lower_gap >= -tol && so.upper_gap >= -tol && so.pinch_error <= 1e-12;
        out.push(so);
    }
    Ok(BarrierSection { passed: out.iter().all(|s| s.passed), tol, eps: cfg.barrier.eps.clone(), seeds: out })
}

fn load(opts: &RunOptions) -> Result<(ProblemConfig, ProblemInstance)> {
    let mut cfg = ProblemConfig::load(&opts.config)?;
    if let Some(t) = opts.tol {
        cfg.solve.tol = t;
    }
    if let Some(m) = opts.method {
        cfg.solve.method = method_name(m).into();
    }
    let problem = cfg.build()?;
    Ok((cfg, problem))
}

fn solve_into(report: &mut RunReport, cfg: &ProblemConfig, problem: &ProblemInstance, opts: &RunOptions) -> Result<SolutionField> {
    let mut params = cfg.solve_params()?;
    params.force = opts.force;
    let field = solve_family(problem, &params)?;
    if field.is_empty() {
        return Err(Error::Usage("grid has no interior slices; nothing to solve".into()));
    }
    let dump = opts.out.join("solution.dat");
    write_field(&dump, &problem.grid, problem.m(), &field.values, &field.residuals, &field.contact)?;
    report.solve = Some(solve_section(problem, cfg, &field, params.method, opts.force, &dump)?);
    Ok(field)
}

fn execute(cmd: Command, opts: &RunOptions, report: &mut RunReport) -> Result<()> {
    let (cfg, problem) = load(opts)?;
    report.config = Some(cfg.echo(&problem)?);
    report.environment.nodes = problem.grid.len();
    let (section, gate) = validation_section(&problem, &cfg);
    report.validation = Some(section);
    match cmd {
        Command::Validate => {
            if let Err(e) = gate {
                report.fail(e.exit_code(), e.to_string());
            }
        }
        Command::Solve => {
            solve_into(report, &cfg, &problem, opts)?;
        }
        Command::Barriers => {
            let field = solve_into(report, &cfg, &problem, opts)?;
            let section = barrier_section(&problem, &cfg, &field.values)?;
            if !section.passed {
                report.fail(2, "a barrier failed verification or ordering");
            }
            report.barrier = Some(section);
        }
        Command::Envelope => {
            let env_cfg = cfg.envelope_config(&problem.grid)?;
            if env_cfg.x_hat.is_empty() {
                return Err(Error::Barrier("empty barrier family".into()));
            }
            let field = solve_into(report, &cfg, &problem, opts)?;
            let env = perron_envelope(&problem, &field.values, &env_cfg)?;
            let grid = &problem.grid;
            let m = problem.m();
            let finite: Vec<f64> = env.gap.iter().copied().filter(|g| g.is_finite()).collect();
            let gap_max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let gap_mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
            let first = grid.interior_slices().next().unwrap_or(0);
            let gap_first = env_cfg
                .x_hat
                .iter()
                .flat_map(|&s| (0..m).map(move |i| grid.node(first, s) * m + i))
                .map(|idx| env.gap[idx])
                .fold(f64::NEG_INFINITY, f64::max);
            let (res, _, _) = residuals(&problem, &env.w);
            let dump = opts.out.join("envelope.dat");
            let gap_dump = opts.out.join("envelope_gap.dat");
            write_field(&dump, grid, m, &env.w, &res, &[])?;
            write_field(&gap_dump, grid, m, &env.gap, &[], &[])?;
            let domination = &env.report.entries[0];
            let passed = domination.passed;
            report.envelope = Some(EnvelopeSection {
                passed,
                seeds: env_cfg.x_hat.len(),
                members: env.members,
                excluded_by_cap: env.excluded_by_cap,
                excluded_unverified: env.excluded_unverified,
                cap: env.cap,
                domination: domination.into(),
                gap_max,
                gap_mean,
                gap_first_slice_seeds: gap_first,
                dump: "envelope.dat".into(),
                gap_dump: "envelope_gap.dat".into(),
            });
            if !passed {
                report.fail(2, "envelope exceeds the solution");
            }
        }
        Command::Compare => {
            let (Some(sub), Some(sup)) = (&opts.sub, &opts.sup) else {
                return Err(Error::Usage("compare needs --sub <dump> and --super <dump>".into()));
            };
            let read = |p: &Path| -> Result<Vec<f64>> {
                let d = FieldDump::read(p)?;
                d.check_grid(&problem.grid, p)?;
                if d.m != problem.m() {
                    return Err(Error::Shape { path: p.to_path_buf(), message: format!("{} modes, problem has {}", d.m, problem.m()) });
                }
                Ok(d.values())
            };
            let (a, b) = (read(sub)?, read(sup)?);
            let tol = cfg.barrier.tol;
            let ra = verify_subsupersolution(&problem, &a, Role::Sub, tol)?;
            let rb = verify_subsupersolution(&problem, &b, Role::Super, tol)?;
            let mut section = ComparisonSection {
                sub: sub.display().to_string(),
                sup: sup.display().to_string(),
                sub_checks: entries(&ra),
                super_checks: entries(&rb),
                result: None,
            };
            let verified = VerifiedSub::verify(&problem, a, tol).and_then(|s| Ok((s, VerifiedSuper::verify(&problem, b, tol)?)));
            match verified {
                Err(e) => {
                    report.comparison = Some(section);
                    return Err(e);
                }
                Ok((s, t)) => {
                    let c = comparison_check(&problem, &s, &t, tol)?;
                    if !c.entry.passed {
                        report.fail(2, "subsolution exceeds supersolution");
                    }
                    section.result = Some((&c.entry).into());
                    report.comparison = Some(section);
                }
            }
        }
    }
    Ok(())
}

/// Runs one command and writes `report.toml` into the output directory.
pub fn run_command(cmd: Command, opts: &RunOptions) -> RunReport {
    let t0 = Instant::now();
    let mut report = RunReport::new(cmd);
    let outcome = std::fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e)).and_then(|_| execute(cmd, opts, &mut report));
    if let Err(e) = outcome {
        report.status = "error".into();
        report.exit_code = e.exit_code();
        report.message = Some(e.to_string());
    }
    report.environment.wall_time = t0.elapsed().as_secs_f64();
    let path = opts.out.join("report.toml");
    if let Err(e) = std::fs::write(&path, report.to_toml()) {
        report.status = "error".into();
        report.exit_code = 1;
        report.message = Some(Error::io(&path, e).to_string());
    }
    report
}
