//! TOML problem configuration.
//!
//! Coefficients, costs and data accept a number, an expression string, or a
//! `{ file = "...", column = "u1" }` reference to a field dump on the same grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::barriers::{BarrierSettings, CPolicy, EnvelopeConfig, PhiKind};
use crate::dump::FieldDump;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{CellMask, Domain, Grid, SpatialTag};
use crate::operators::{Coef, LinearTerms, ModulusConfig, OperatorSpec, Sampled};
use crate::problem::{ProblemInstance, ValidateOptions};
use crate::solver::{Method, SolveParams, Start};
use crate::switching::{ProblemData, SwitchingCosts};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Expr(String),
    File { file: PathBuf, column: Column },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub bounds: Vec<[f64; 2]>,
    #[serde(default = "one")]
    pub length: f64,
    /// Cells whose centre gives a nonnegative value are inside.
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: OneOrMany<usize>,
    pub ny: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub a: Vec<Value>,
    pub b: Option<Vec<Value>>,
    pub gamma: f64,
    pub h: Option<Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub variant: String,
    pub a: Option<Vec<Value>>,
    pub b: Option<Vec<Value>>,
    pub gamma: Option<f64>,
    /// One value for every mode, or one per mode.
    pub h: Option<OneOrMany<Value>>,
    pub controls: Option<Vec<ControlConfig>>,
    pub lambda: Option<f64>,
    pub big_lambda: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModesConfig {
    pub m: usize,
    /// `c{i}{j}` or `c{i}_{j}`, 1-based.
    #[serde(flatten)]
    pub costs: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub g: OneOrMany<Value>,
    pub f: Option<OneOrMany<Value>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub tol: f64,
    pub method: String,
    pub max_iter: Option<usize>,
    pub relaxation: f64,
    pub start: String,
    pub contact_tol: f64,
    pub delta0_warn: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        let p = SolveParams::default();
        Self {
            tol: p.tol,
            method: "pi".into(),
            max_iter: None,
            relaxation: p.relaxation,
            start: "low".into(),
            contact_tol: p.contact_tol,
            delta0_warn: p.delta0_warn,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedSet {
    /// `"all"` (every closed-domain node) or `"interior"`.
    Keyword(String),
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CValue {
    Number(f64),
    /// `"auto"`.
    Keyword(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    pub a: f64,
    pub phi: String,
    pub eps: Vec<f64>,
    pub x_hat: Option<SeedSet>,
    /// Evenly spaced seeds over the closed domain when `x_hat` is absent.
    pub samples: usize,
    pub c: CValue,
    pub b_floor: f64,
    pub kappa_init: f64,
    pub tol: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            a: 0.0,
            phi: "constant".into(),
            eps: vec![1.0, 0.1, 0.01],
            x_hat: None,
            samples: 10,
            c: CValue::Number(0.0),
            b_floor: 0.0,
            kappa_init: 1.0,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub eta: f64,
    pub strict: bool,
    pub samples: usize,
    pub seed: u64,
    pub r_scale: f64,
    pub p_scale: f64,
    pub x_scale: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        let m = ModulusConfig::default();
        Self { eta: 0.0, strict: false, samples: m.samples, seed: m.seed, r_scale: m.r_scale, p_scale: m.p_scale, x_scale: m.x_scale }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Closed-form solution per mode, or one shared by every mode.
    pub solution: OneOrMany<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: Option<String>,
    pub domain: DomainConfig,
    pub grid: GridConfig,
    /// A single operator, or one `[[operator]]` table per mode.
    pub operator: OneOrMany<OperatorConfig>,
    pub modes: ModesConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub barrier: BarrierConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    pub reference: Option<ReferenceConfig>,
    #[serde(skip)]
    pub path: PathBuf,
}

fn one() -> f64 {
    1.0
}

/// Resolved values echoed into run reports.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub name: String,
    pub path: String,
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
    pub length: f64,
    pub masked: bool,
    pub nx: Vec<usize>,
    pub ny: usize,
    pub m: usize,
    pub operator: Vec<String>,
    pub tol: f64,
    pub method: String,
    pub start: String,
    pub max_iter: usize,
    pub relaxation: f64,
    pub contact_tol: f64,
    pub eta: f64,
    pub strict: bool,
    pub barrier_a: f64,
    pub barrier_phi: String,
    pub barrier_c: String,
    pub barrier_b_floor: f64,
    pub barrier_eps: Vec<f64>,
    pub barrier_tol: f64,
}

impl ProblemConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: ProblemConfig =
            toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.path = path.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Config { path: self.path.clone(), message: message.into() }
    }

    fn dim(&self) -> usize {
        self.domain.bounds.len()
    }

    pub fn domain(&self) -> Result<Domain> {
        let bounds = self.domain.bounds.iter().map(|b| (b[0], b[1])).collect();
        let mut d = Domain::new(bounds, self.domain.length)?;
        if let Some(src) = &self.domain.mask {
            let e = Expr::parse(src, self.dim())?;
            d = d.with_mask(Arc::new(move |x: &[f64]| e.eval(0.0, x) >= 0.0) as CellMask);
        }
        Ok(d)
    }

    pub fn grid(&self) -> Result<Grid> {
        let mut nx = self.grid.nx.to_vec();
        if nx.len() == 1 {
            nx = vec![nx[0]; self.dim()];
        }
        Grid::build(self.domain()?, &nx, self.grid.ny)
    }

    fn resolve_path(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(file)
        }
    }

    fn coef(&self, v: &Value, grid: &Arc<Grid>, what: &str) -> Result<Coef> {
        match v {
            Value::Number(x) => Ok(Coef::Const(*x)),
            Value::Expr(s) => Expr::parse(s, grid.dim()).map(Coef::Expr).map_err(|e| self.err(format!("{what}: {e}"))),
            Value::File { file, column } => {
                let path = self.resolve_path(file);
                let dump = FieldDump::read(&path)?;
                dump.check_grid(grid, &path)?;
                let idx = match column {
                    Column::Name(n) => dump.column_index(n),
                    Column::Index(k) => (*k < dump.columns.len()).then_some(*k),
                }
                .ok_or_else(|| Error::Shape { path: path.clone(), message: format!("{what}: no column {column:?}") })?;
                Ok(Coef::Sampled(Arc::new(Sampled { grid: grid.clone(), values: dump.column(idx) })))
            }
        }
    }

    fn coefs(&self, vs: &[Value], grid: &Arc<Grid>, what: &str) -> Result<Vec<Coef>> {
        if vs.len() != grid.dim() {
            return Err(self.err(format!("{what}: {} entries for dimension {}", vs.len(), grid.dim())));
        }
        vs.iter().enumerate().map(|(k, v)| self.coef(v, grid, &format!("{what}[{}]", k + 1))).collect()
    }

    fn per_mode<T: Clone>(&self, v: Vec<T>, m: usize, what: &str) -> Result<Vec<T>> {
        match v.len() {
            1 => Ok(vec![v[0].clone(); m]),
            n if n == m => Ok(v),
            n => Err(self.err(format!("{what}: {n} entries for {m} modes"))),
        }
    }

    fn operators(&self, grid: &Arc<Grid>, m: usize) -> Result<Vec<OperatorSpec>> {
        let blocks = self.per_mode(self.operator.to_vec(), m, "operator")?;
        let shared = matches!(self.operator, OneOrMany::One(_));
        let mut out = Vec::with_capacity(m);
        for (i, oc) in blocks.iter().enumerate() {
            let hs = match &oc.h {
                None => vec![Value::Number(0.0)],
                Some(h) => h.to_vec(),
            };
            let h = if shared { self.per_mode(hs, m, "operator.h")?[i].clone() } else { self.per_mode(hs, 1, "operator.h")?[0].clone() };
            let h = self.coef(&h, grid, "operator.h")?;
            let zeros = vec![Value::Number(0.0); grid.dim()];
            let spec = match oc.variant.as_str() {
                "linear-diagonal" => {
                    let a = self.coefs(oc.a.as_deref().ok_or_else(|| self.err("operator.a missing"))?, grid, "operator.a")?;
                    let b = self.coefs(oc.b.as_deref().unwrap_or(&zeros), grid, "operator.b")?;
                    let gamma = oc.gamma.ok_or_else(|| self.err("operator.gamma missing"))?;
                    OperatorSpec::LinearDiagonal(LinearTerms::new(a, b, gamma, h))
                }
                "hjb-sup" => {
                    let controls = oc.controls.as_deref().ok_or_else(|| self.err("operator.controls missing"))?;
                    let terms = controls
                        .iter()
                        .map(|c| {
                            let a = self.coefs(&c.a, grid, "controls.a")?;
                            let b = self.coefs(c.b.as_deref().unwrap_or(&zeros), grid, "controls.b")?;
                            let hc = match &c.h {
                                Some(v) => self.coef(v, grid, "controls.h")?,
                                None => h.clone(),
                            };
                            Ok(LinearTerms::new(a, b, c.gamma, hc))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    OperatorSpec::HJBSup(terms)
                }
                "pucci-plus" => OperatorSpec::PucciPlus {
                    dim: grid.dim(),
                    lambda: oc.lambda.ok_or_else(|| self.err("operator.lambda missing"))?,
                    big_lambda: oc.big_lambda.ok_or_else(|| self.err("operator.big_lambda missing"))?,
                    gamma: oc.gamma.ok_or_else(|| self.err("operator.gamma missing"))?,
                    h,
                },
                other => {
                    return Err(self.err(format!("unknown operator variant {other:?}; expected linear-diagonal, hjb-sup or pucci-plus")))
                }
            };
            out.push(spec);
        }
        Ok(out)
    }

    /// Cost coefficients keyed by 0-based `(i, j)`.
    fn cost_table(&self) -> Result<BTreeMap<(usize, usize), Value>> {
        let m = self.modes.m;
        let mut table = BTreeMap::new();
        for (key, v) in &self.modes.costs {
            let digits = key.strip_prefix('c').ok_or_else(|| self.err(format!("modes: unknown key {key:?}")))?;
            let pair = match digits.split_once('_') {
                Some((a, b)) => (a.parse::<usize>().ok(), b.parse::<usize>().ok()),
                None if digits.len() == 2 && m <= 9 => (digits[..1].parse().ok(), digits[1..].parse().ok()),
                None => (None, None),
            };
            match pair {
                (Some(i), Some(j)) if (1..=m).contains(&i) && (1..=m).contains(&j) => {
                    table.insert((i - 1, j - 1), v.clone());
                }
                _ => return Err(self.err(format!("modes: bad cost key {key:?} for m = {m}"))),
            }
        }
        let missing: Vec<String> = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && !table.contains_key(&(i, j)))
            .map(|(i, j)| format!("c{}{}", i + 1, j + 1))
            .collect();
        if !missing.is_empty() {
            return Err(self.err(format!("cost matrix incomplete: missing {}", missing.join(", "))));
        }
        Ok(table)
    }

    /// Samples every coefficient on the grid and assembles the instance.
    pub fn build(&self) -> Result<ProblemInstance> {
        let m = self.modes.m;
        if m == 0 {
            return Err(self.err("modes.m must be at least 1"));
        }
        let grid = Arc::new(self.grid()?);
        let ops = self.operators(&grid, m)?;
        let table = self.cost_table()?;
        let mut coefs = vec![None; m * m];
        for (&(i, j), v) in &table {
            coefs[i * m + j] = Some(self.coef(v, &grid, &format!("c{}{}", i + 1, j + 1))?);
        }
        let costs = SwitchingCosts::from_fn(&grid, m, |i, j, y, x| coefs[i * m + j].as_ref().map_or(0.0, |c| c.eval(y, x)))?;
        for i in 0..m {
            if coefs[i * m + i].is_some() {
                for slice in 0..grid.ny() {
                    for s in grid.closure_nodes() {
                        let v = costs.get(grid.node(slice, s), i, i);
                        if v != 0.0 {
                            return Err(self.err(format!(
                                "c{0}{0} = {v} at y = {1}, x = {2:?}; diagonal costs must vanish (O2)",
                                i + 1,
                                grid.y(slice),
                                grid.coords(s)
                            )));
                        }
                    }
                }
            }
        }
        let g = self.per_mode(self.data.g.to_vec(), m, "data.g")?;
        let f = self.per_mode(self.data.f.as_ref().map_or(vec![Value::Number(0.0)], |f| f.to_vec()), m, "data.f")?;
        let g = g.iter().enumerate().map(|(i, v)| self.coef(v, &grid, &format!("g{}", i + 1))).collect::<Result<Vec<_>>>()?;
        let f = f.iter().enumerate().map(|(i, v)| self.coef(v, &grid, &format!("f{}", i + 1))).collect::<Result<Vec<_>>>()?;
        let data = ProblemData::from_fn(&grid, m, |i, x| g[i].eval(0.0, x), |i, y, x| f[i].eval(y, x))?;
        ProblemInstance::new(grid, ops, costs, data)
    }

    pub fn solve_params(&self) -> Result<SolveParams> {
        let s = &self.solve;
        let method = parse_method(&s.method).ok_or_else(|| self.err(format!("solve.method {:?}: expected vi or pi", s.method)))?;
        let start = match s.start.as_str() {
            "low" => Start::Low,
            "high" => Start::High,
            other => return Err(self.err(format!("solve.start {other:?}: expected low or high"))),
        };
        Ok(SolveParams {
            tol: s.tol,
            max_iter: s.max_iter,
            method,
            relaxation: s.relaxation,
            start,
            contact_tol: s.contact_tol,
            force: false,
            delta0_warn: s.delta0_warn,
        })
    }

    pub fn validate_options(&self) -> ValidateOptions {
        let v = &self.validate;
        ValidateOptions {
            eta: v.eta,
            strict: v.strict,
            modulus: ModulusConfig { samples: v.samples, r_scale: v.r_scale, p_scale: v.p_scale, x_scale: v.x_scale, seed: v.seed },
        }
    }

    pub fn barrier_settings(&self) -> Result<BarrierSettings> {
        let b = &self.barrier;
        let phi = match b.phi.as_str() {
            "constant" => PhiKind::Constant,
            "quadratic" => PhiKind::Quadratic,
            other => return Err(self.err(format!("barrier.phi {other:?}: expected constant or quadratic"))),
        };
        let c = match &b.c {
            CValue::Number(c) => CPolicy::Fixed(*c),
            CValue::Keyword(k) if k == "auto" => CPolicy::Auto,
            CValue::Keyword(k) => return Err(self.err(format!("barrier.c {k:?}: expected a number or \"auto\""))),
        };
        Ok(BarrierSettings { a: b.a, phi, kappa_init: b.kappa_init, b_floor: b.b_floor, c })
    }

    /// Spatial seed nodes of the barrier family.
    pub fn seeds(&self, grid: &Grid) -> Result<Vec<usize>> {
        let closure: Vec<usize> = grid.closure_nodes().collect();
        match &self.barrier.x_hat {
            Some(SeedSet::Keyword(k)) if k == "all" => Ok(closure),
            Some(SeedSet::Keyword(k)) if k == "interior" => Ok(grid.interior_nodes().to_vec()),
            Some(SeedSet::Keyword(k)) => Err(self.err(format!("barrier.x_hat {k:?}: expected \"all\", \"interior\" or a point list"))),
            Some(SeedSet::Points(pts)) => pts
                .iter()
                .map(|p| {
                    if p.len() != grid.dim() {
                        return Err(self.err(format!("barrier.x_hat point {p:?} has wrong dimension")));
                    }
                    match grid.nearest_node(p) {
                        Some(s) if grid.tag(s) != SpatialTag::Outside => Ok(s),
                        _ => Err(self.err(format!("barrier.x_hat point {p:?} is outside the domain"))),
                    }
                })
                .collect(),
            None => {
                let k = self.barrier.samples.min(closure.len());
                if k == 0 {
                    return Ok(Vec::new());
                }
                let mut seeds: Vec<usize> = (0..k).map(|q| closure[q * (closure.len() - 1) / (k - 1).max(1)]).collect();
                seeds.dedup();
                Ok(seeds)
            }
        }
    }

    pub fn envelope_config(&self, grid: &Grid) -> Result<EnvelopeConfig> {
        Ok(EnvelopeConfig {
            eps: self.barrier.eps.clone(),
            x_hat: self.seeds(grid)?,
            cap: None,
            tol: self.barrier.tol,
            settings: self.barrier_settings()?,
        })
    }

    /// Closed-form solution per mode, when given.
    pub fn reference(&self, grid: &Grid, m: usize) -> Result<Option<Vec<Expr>>> {
        let Some(r) = &self.reference else { return Ok(None) };
        let srcs = self.per_mode(r.solution.to_vec(), m, "reference.solution")?;
        srcs.iter().map(|s| Expr::parse(s, grid.dim())).collect::<Result<Vec<_>>>().map(Some)
    }

    pub fn echo(&self, problem: &ProblemInstance) -> Result<ConfigEcho> {
        let p = self.solve_params()?;
        Ok(ConfigEcho {
            name: self.name.clone().unwrap_or_default(),
            path: self.path.display().to_string(),
            dim: self.dim(),
            bounds: self.domain.bounds.clone(),
            length: self.domain.length,
            masked: self.domain.mask.is_some(),
            nx: problem.grid.nx().to_vec(),
            ny: problem.grid.ny(),
            m: problem.m(),
            operator: problem.operators.iter().map(|o| o.variant().to_string()).collect(),
            tol: p.tol,
            method: method_name(p.method).into(),
            start: self.solve.start.clone(),
            max_iter: p.max_iter(),
            relaxation: p.relaxation,
            contact_tol: p.contact_tol,
            eta: self.validate.eta,
            strict: self.validate.strict,
            barrier_a: self.barrier.a,
            barrier_phi: self.barrier.phi.clone(),
            barrier_c: match &self.barrier.c {
                CValue::Number(c) => c.to_string(),
                CValue::Keyword(k) => k.clone(),
            },
            barrier_b_floor: self.barrier.b_floor,
            barrier_eps: self.barrier.eps.clone(),
            barrier_tol: self.barrier.tol,
        })
    }
}

pub fn parse_method(s: &str) -> Option<Method> {
    match s {
        "pi" | "policy-iteration" => Some(Method::PolicyIteration),
        "vi" | "value-iteration" => Some(Method::ValueIteration),
        _ => None,
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::PolicyIteration => "pi",
        Method::ValueIteration => "vi",
    }
}
