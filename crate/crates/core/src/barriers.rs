//! Explicit barrier pairs `(U, V)` pinned at a seed point, discrete sub/supersolution checks,
//! comparison, the Perron envelope experiment and the θ-modification.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{dist, Grid, SpatialTag};
use crate::problem::ProblemInstance;
use crate::report::{Axiom, Entry, Tracker, ValidationReport, Witness};
use crate::solver::{residuals, SliceSystem};

/// Weight profile entering the barrier through `A(φ − φ(x̂))` and `exp(κφ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PhiKind {
    /// `φ ≡ 1`.
    Constant,
    /// `φ(x) = 1 + |x − x̂|²`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phi {
    pub kind: PhiKind,
    pub center: Vec<f64>,
}

impl Phi {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.kind {
            PhiKind::Constant => 1.0,
            PhiKind::Quadratic => 1.0 + dist(x, &self.center).powi(2),
        }
    }
}

/// `φ` centred at spatial node `x_hat` and the radius on which `φ ≥ φ(x̂)`.
///
/// Both profiles attain their minimum at `x̂`, so the radius is the whole domain.
pub fn choose_phi(grid: &Grid, x_hat: usize, kind: PhiKind) -> (Phi, f64) {
    (Phi { kind, center: grid.coords(x_hat) }, grid.diameter())
}

/// Growth rate of the barriers in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CPolicy {
    Fixed(f64),
    /// Smallest `C` making the discrete interior and lateral inequalities hold on every slice.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSettings {
    pub a: f64,
    pub phi: PhiKind,
    /// `κ` used before the first update.
    pub kappa_init: f64,
    /// Lower bound on `B`; positive values keep `κ` defined when `A(φ − φ(x̂)) < 0` on the boundary.
    pub b_floor: f64,
    pub c: CPolicy,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self { a: 0.0, phi: PhiKind::Constant, kappa_init: 1.0, b_floor: 0.0, c: CPolicy::Fixed(0.0) }
    }
}

/// Constants of the barrier family seeded at one node, shared by every reference mode and `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierConstants {
    /// Spatial node of the seed.
    pub x_hat: usize,
    pub phi: Phi,
    pub a: f64,
    /// Radius of the ball on which `φ ≥ φ(x̂)`.
    pub delta: f64,
    /// Nodes closer than this to `x̂` need no help from the `B` term.
    pub r: f64,
    pub b_tilde: f64,
    pub b: f64,
    pub kappa: f64,
    pub c: f64,
    pub passes: usize,
    pub notes: Vec<String>,
}

struct SeedScan {
    xh: Vec<f64>,
    phi_hat: f64,
    /// `(dist, φ, k1, kU)` per closure node.
    nodes: Vec<(f64, f64, f64, f64)>,
}

fn scan_seed(problem: &ProblemInstance, phi: &Phi, x_hat: usize, a: f64) -> SeedScan {
    let grid = &problem.grid;
    let m = problem.m();
    let xh = grid.coords(x_hat);
    let phi_hat = phi.eval(&xh);
    let mut nodes = Vec::new();
    for s in grid.closure_nodes() {
        let x = grid.coords(s);
        let ph = phi.eval(&x);
        let shift = a * (ph - phi_hat);
        let node = grid.node(0, s);
        let mut k1 = f64::INFINITY;
        let mut ku = f64::INFINITY;
        for j in 0..m {
            for i in 0..m {
                k1 = k1.min(problem.data.g(x_hat, i) - problem.data.g(s, j) + problem.costs.get(node, i, j) + shift);
            }
            ku = ku.min(problem.data.g(s, j) - problem.data.g(x_hat, j) + shift);
        }
        nodes.push((dist(&x, &xh), ph, k1, ku));
    }
    SeedScan { xh, phi_hat, nodes }
}

/// `B̃`, `B`, `κ`, `C` for the family seeded at spatial node `x_hat`.
///
/// `B̃` makes `V(0,·) ≥ g` and `U(0,·) ≤ g` outside the ball of radius `r`; inside it the
/// inequalities hold with `B = 0`. `κ` and `B` are iterated to a joint fixed point.
pub fn compute_barrier_constants(problem: &ProblemInstance, x_hat: usize, settings: &BarrierSettings) -> Result<BarrierConstants> {
    let grid = &problem.grid;
    if x_hat >= grid.spatial_len() || grid.tag(x_hat) == SpatialTag::Outside {
        return Err(Error::Barrier(format!("seed node {x_hat} is not in the closed domain")));
    }
    if !(settings.a.is_finite() && settings.b_floor >= 0.0 && settings.kappa_init > 0.0) {
        return Err(Error::Barrier("A must be finite, B floor nonnegative and κ positive".into()));
    }
    let (phi, delta) = choose_phi(grid, x_hat, settings.phi);
    let scan = scan_seed(problem, &phi, x_hat, settings.a);
    let mut notes = Vec::new();

    // Largest radius whose open ball contains only nodes with k1 ≥ 0 and kU ≥ 0.
    let r = scan.nodes.iter().filter(|n| n.2 < 0.0 || n.3 < 0.0).map(|n| n.0).fold(f64::INFINITY, f64::min);
    let excl: Vec<&(f64, f64, f64, f64)> = scan.nodes.iter().filter(|n| n.0 >= r).collect();
    if excl.is_empty() {
        notes.push("exclusion set empty; B~ = 0".to_string());
    }
    if excl.iter().any(|n| n.0 == 0.0) {
        return Err(Error::Barrier(format!("data incompatible at seed {:?}: g_i(x^) - g_j(x^) + c_ij(0,x^) < 0 (axiom O5)", scan.xh)));
    }
    let k1min = excl.iter().map(|n| n.2).fold(f64::INFINITY, f64::min);
    let kumin = excl.iter().map(|n| n.3).fold(f64::INFINITY, f64::min);
    let b_req = |kappa: f64| -> f64 {
        if excl.is_empty() {
            return 0.0;
        }
        let k2min = excl.iter().map(|n| (kappa * n.1).exp() * n.0 * n.0).fold(f64::INFINITY, f64::min);
        0.0f64.max(-k1min / k2min).max(-kumin / k2min)
    };

    let interior = grid.tag(x_hat) == SpatialTag::Interior;
    let mut gamma_a = f64::INFINITY;
    let mut phi_min = f64::INFINITY;
    let mut d = f64::INFINITY;
    for s in grid.boundary_nodes() {
        let x = grid.coords(s);
        let ph = phi.eval(&x);
        gamma_a = gamma_a.min(settings.a * (ph - scan.phi_hat));
        phi_min = phi_min.min(ph);
        d = d.min(dist(&x, &scan.xh));
    }
    let kappa_rule = |b: f64| -> Result<f64> {
        if !interior || !(gamma_a < 0.0) {
            return Ok(1.0);
        }
        if b <= 0.0 {
            return Err(Error::Barrier("κ undefined, increase B floor".into()));
        }
        Ok(1.0f64.max(-gamma_a / (b * d * d * phi_min)))
    };

    let mut kappa = settings.kappa_init;
    let mut b = settings.b_floor.max(b_req(kappa));
    let mut passes = 0;
    let mut settled = false;
    while passes < 10 {
        passes += 1;
        let k_new = kappa_rule(b)?;
        let b_new = b.max(b_req(k_new));
        let same = (k_new - kappa).abs() <= 1e-12 * kappa.abs().max(1.0) && (b_new - b).abs() <= 1e-12 * b.abs().max(1.0);
        kappa = k_new;
        b = b_new;
        if same {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::Barrier(format!("B and κ not self-consistent after {passes} passes")));
    }
    let b_tilde = b_req(kappa);
    if !(b.is_finite() && kappa.is_finite()) {
        return Err(Error::Barrier(format!("non-finite constants B = {b}, κ = {kappa}")));
    }
    notes.push("phi >= phi(x^) on the whole domain; B = max(B~, floor)".to_string());

    let mut k = BarrierConstants { x_hat, phi, a: settings.a, delta, r, b_tilde, b, kappa, c: 0.0, passes, notes };
    k.c = match settings.c {
        CPolicy::Fixed(c) if c >= 0.0 && c.is_finite() => c,
        CPolicy::Fixed(c) => return Err(Error::Barrier(format!("C must be finite and nonnegative, got {c}"))),
        CPolicy::Auto => auto_c(problem, &k),
    };
    Ok(k)
}

/// Smallest `C` for which the `ε = 0` barriers satisfy the discrete inequalities away from `y = 0`.
///
/// Adding `k ≥ 0` to a field raises `F_h` by at least `γ_min k`, so each requirement is linear in `C`.
fn auto_c(problem: &ProblemInstance, k: &BarrierConstants) -> f64 {
    let grid = &problem.grid;
    let m = problem.m();
    let slices: Vec<usize> = grid.interior_slices().collect();
    let need = slices
        .par_iter()
        .map(|&slice| {
            let y = grid.y(slice);
            let sys = SliceSystem::new(problem, slice);
            let base = grid.node(slice, 0);
            let mut need = 0.0f64;
            let mut uf = vec![vec![0.0; grid.spatial_len()]; m];
            let mut vf = vec![vec![vec![0.0; grid.spatial_len()]; m]; m];
            for s in grid.closure_nodes() {
                for (i, vi) in vf.iter_mut().enumerate() {
                    let p = BarrierParams::from_constants(k, problem, i, 0.0);
                    let (u, v) = p.pair(y, &grid.coords(s), problem.costs.at(base + s));
                    for j in 0..m {
                        vi[j][s] = v[j];
                        uf[j][s] = u[j];
                    }
                }
            }
            for s in grid.boundary_nodes() {
                for j in 0..m {
                    let f = problem.data.f(base + s, j);
                    need = need.max((uf[j][s] - f) / y);
                    for vi in &vf {
                        need = need.max((f - vi[j][s]) / y);
                    }
                }
            }
            for (kk, &s) in sys.nodes().iter().enumerate() {
                for j in 0..m {
                    let gm = sys.ops[j].gamma_min;
                    if uf[j][s] - sys.obstacle(&uf, s, j) > 0.0 {
                        need = need.max(sys.ops[j].apply(kk, &uf[j]) / (gm * y));
                    }
                    for vi in &vf {
                        need = need.max(-sys.ops[j].apply(kk, &vi[j]) / (gm * y));
                    }
                }
            }
            need
        })
        .reduce(|| 0.0, f64::max);
    if need > 0.0 {
        need * (1.0 + 1e-9)
    } else {
        0.0
    }
}

/// One member of the barrier family: reference mode `i`, seed, `ε` and constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierParams {
    pub i: usize,
    pub x_hat: usize,
    pub x_hat_coords: Vec<f64>,
    /// `g_j(x̂)` for every mode.
    pub g_hat: Vec<f64>,
    pub eps: f64,
    pub a: f64,
    pub b_tilde: f64,
    pub b: f64,
    pub c: f64,
    pub kappa: f64,
    pub phi: Phi,
    pub phi_hat: f64,
    pub delta: f64,
    pub r: f64,
}

impl BarrierParams {
    pub fn new(k: &BarrierConstants, problem: &ProblemInstance, i: usize, eps: f64) -> Result<Self> {
        if i >= problem.m() {
            return Err(Error::Barrier(format!("reference mode {} out of range 1..={}", i + 1, problem.m())));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Barrier(format!("ε must be positive, got {eps}")));
        }
        Ok(Self::from_constants(k, problem, i, eps))
    }

    fn from_constants(k: &BarrierConstants, problem: &ProblemInstance, i: usize, eps: f64) -> Self {
        let xh = problem.grid.coords(k.x_hat);
        Self {
            i,
            x_hat: k.x_hat,
            g_hat: (0..problem.m()).map(|j| problem.data.g(k.x_hat, j)).collect(),
            phi_hat: k.phi.eval(&xh),
            x_hat_coords: xh,
            eps,
            a: k.a,
            b_tilde: k.b_tilde,
            b: k.b,
            c: k.c,
            kappa: k.kappa,
            phi: k.phi.clone(),
            delta: k.delta,
            r: k.r,
        }
    }

    /// `(U_j, V_j)` for every mode `j` at `(y, x)`; `costs` is the `m × m` matrix there.
    pub fn pair(&self, y: f64, x: &[f64], costs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.g_hat.len();
        let ph = self.phi.eval(x);
        let bend = self.a * (ph - self.phi_hat) + self.b * (self.kappa * ph).exp() * dist(x, &self.x_hat_coords).powi(2);
        let lift = self.eps + self.c * y;
        let u = (0..m).map(|j| self.g_hat[j] - bend - lift).collect();
        let v = (0..m).map(|j| self.g_hat[self.i] + bend + lift + costs[self.i * m + j]).collect();
        (u, v)
    }
}

/// `(U_j, V_j)` at a full-grid node.
pub fn eval_barrier_pair(params: &BarrierParams, problem: &ProblemInstance, node: usize) -> (Vec<f64>, Vec<f64>) {
    let grid = &problem.grid;
    let (slice, s) = grid.split(node);
    params.pair(grid.y(slice), &grid.coords(s), problem.costs.at(node))
}

/// `U` and `V` on every closed-domain node of every slice, entry `node * m + j`; 0 outside.
pub fn barrier_fields(params: &BarrierParams, problem: &ProblemInstance) -> (Vec<f64>, Vec<f64>) {
    let grid = &problem.grid;
    let m = problem.m();
    let mut u = vec![0.0; grid.len() * m];
    let mut v = vec![0.0; grid.len() * m];
    for slice in 0..grid.ny() {
        for s in grid.closure_nodes() {
            let node = grid.node(slice, s);
            let (a, b) = eval_barrier_pair(params, problem, node);
            u[node * m..(node + 1) * m].copy_from_slice(&a);
            v[node * m..(node + 1) * m].copy_from_slice(&b);
        }
    }
    (u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Sub,
    Super,
}

fn check_len(problem: &ProblemInstance, values: &[f64]) -> Result<()> {
    let want = problem.grid.len() * problem.m();
    if values.len() != want {
        return Err(Error::Data(format!("field has {} entries, grid needs {want}", values.len())));
    }
    Ok(())
}

/// Discrete sub- or supersolution test of a full field, entry `node * m + i`.
///
/// Sub: `min{F_h[u_i], u_i − M_i u} ≤ tol` at interior nodes of interior slices,
/// `u_i(0,·) ≤ g_i + tol`, `u_i ≤ f_i + tol` on the lateral boundary. Super reverses all three.
pub fn verify_subsupersolution(problem: &ProblemInstance, values: &[f64], role: Role, tol: f64) -> Result<ValidationReport> {
    check_len(problem, values)?;
    let grid = &problem.grid;
    let m = problem.m();
    let sign = match role {
        Role::Sub => -1.0,
        Role::Super => 1.0,
    };
    let (res, pde, gap) = residuals(problem, values);
    let mut eq = Tracker::new(Axiom::Equation, -tol);
    let mut init = Tracker::new(Axiom::InitialData, -tol);
    let mut bnd = Tracker::new(Axiom::BoundaryData, -tol);
    for slice in grid.interior_slices() {
        for &s in grid.interior_nodes() {
            let node = grid.node(slice, s);
            for i in 0..m {
                let idx = node * m + i;
                eq.observe(sign * res[idx], || {
                    Witness::at(node, grid.location(node)).modes([i + 1]).value("F_h", pde[idx]).value("gap", gap[idx])
                });
            }
        }
        for s in grid.boundary_nodes() {
            let node = grid.node(slice, s);
            for i in 0..m {
                let (u, f) = (values[node * m + i], problem.data.f(node, i));
                bnd.observe(sign * (u - f), || Witness::at(node, grid.location(node)).modes([i + 1]).value("u", u).value("f", f));
            }
        }
    }
    for s in grid.closure_nodes() {
        let node = grid.node(0, s);
        for i in 0..m {
            let (u, g) = (values[node * m + i], problem.data.g(s, i));
            init.observe(sign * (u - g), || Witness::at(node, grid.location(node)).modes([i + 1]).value("u", u).value("g", g));
        }
    }
    let mut report = ValidationReport::default();
    for t in [eq, init, bnd] {
        report.push(t.finish());
    }
    Ok(report)
}

fn refuse(role: &str, report: &ValidationReport) -> Error {
    let worst: Vec<String> = report.failures().map(|e| format!("{} margin {:e}", e.axiom, e.margin)).collect();
    Error::Refused(format!("field is not a discrete {role}solution: {}", worst.join(", ")))
}

/// A field that passed the subsolution test.
#[derive(Debug, Clone)]
pub struct VerifiedSub {
    values: Vec<f64>,
    report: ValidationReport,
}

impl VerifiedSub {
    pub fn verify(problem: &ProblemInstance, values: Vec<f64>, tol: f64) -> Result<Self> {
        let report = verify_subsupersolution(problem, &values, Role::Sub, tol)?;
        if !report.passed() {
            return Err(refuse("sub", &report));
        }
        Ok(Self { values, report })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }
}

/// A field that passed the supersolution test.
#[derive(Debug, Clone)]
pub struct VerifiedSuper {
    values: Vec<f64>,
    report: ValidationReport,
}

impl VerifiedSuper {
    pub fn verify(problem: &ProblemInstance, values: Vec<f64>, tol: f64) -> Result<Self> {
        let report = verify_subsupersolution(problem, &values, Role::Super, tol)?;
        if !report.passed() {
            return Err(refuse("super", &report));
        }
        Ok(Self { values, report })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    /// Margin is the smallest `super − sub`.
    pub entry: Entry,
    /// `super − sub` on compared nodes, NaN elsewhere.
    pub gap: Vec<f64>,
}

/// `sub ≤ super + tol` on every closed-domain node of the slices `y < L`.
pub fn comparison_check(problem: &ProblemInstance, sub: &VerifiedSub, sup: &VerifiedSuper, tol: f64) -> Result<Comparison> {
    check_len(problem, sub.values())?;
    check_len(problem, sup.values())?;
    let grid = &problem.grid;
    let m = problem.m();
    let mut gap = vec![f64::NAN; grid.len() * m];
    let mut t = Tracker::new(Axiom::Comparison, -tol);
    for slice in 0..grid.ny() - 1 {
        for s in grid.closure_nodes() {
            let node = grid.node(slice, s);
            for i in 0..m {
                let idx = node * m + i;
                let (a, b) = (sub.values[idx], sup.values[idx]);
                gap[idx] = b - a;
                t.observe(b - a, || Witness::at(node, grid.location(node)).modes([i + 1]).value("sub", a).value("super", b));
            }
        }
    }
    Ok(Comparison { entry: t.finish(), gap })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaParams {
    pub theta: f64,
    pub length: f64,
}

impl ThetaParams {
    pub fn new(theta: f64, length: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Usage(format!("θ must be positive, got {theta}")));
        }
        Ok(Self { theta, length })
    }

    pub fn shift(&self, y: f64) -> f64 {
        self.theta / (self.length - y)
    }
}

/// `u_i − θ/(L − y)` on every slice below `L`; the terminal slice is NaN.
pub fn theta_modify(grid: &Grid, m: usize, values: &[f64], tp: ThetaParams) -> Vec<f64> {
    let ns = grid.spatial_len();
    let last = grid.ny() - 1;
    let mut out = values.to_vec();
    for slice in 0..grid.ny() {
        let shift = if slice == last { f64::NAN } else { tp.shift(grid.y(slice)) };
        for v in &mut out[grid.node(slice, 0) * m..(grid.node(slice, 0) + ns) * m] {
            *v = if slice == last { f64::NAN } else { *v - shift };
        }
    }
    out
}

/// Mode-major θ-modified slice; the terminal slice has a pole.
pub fn theta_modify_slice(grid: &Grid, u: &[Vec<f64>], slice: usize, tp: ThetaParams) -> Result<Vec<Vec<f64>>> {
    if slice + 1 >= grid.ny() {
        return Err(Error::Usage(format!("slice {slice} lies at y = L where θ/(L − y) is undefined")));
    }
    let shift = tp.shift(grid.y(slice));
    Ok(u.iter().map(|col| col.iter().map(|v| v - shift).collect()).collect())
}

#[derive(Debug, Clone)]
pub struct EnvelopeConfig {
    /// Strictly decreasing positive `ε` values.
    pub eps: Vec<f64>,
    /// Spatial seed nodes.
    pub x_hat: Vec<usize>,
    /// Upper bound for admitted members; defaults to the largest `V` at the first `ε`.
    pub cap: Option<f64>,
    /// Verification tolerance and domination slack.
    pub tol: f64,
    pub settings: BarrierSettings,
}

impl EnvelopeConfig {
    pub fn new(eps: Vec<f64>, x_hat: Vec<usize>) -> Self {
        Self { eps, x_hat, cap: None, tol: 1e-8, settings: BarrierSettings::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Envelope {
    /// Pointwise max of admitted `U` members, entry `node * m + j`.
    pub w: Vec<f64>,
    /// `solution − w`, NaN outside the compared nodes.
    pub gap: Vec<f64>,
    pub cap: f64,
    pub members: usize,
    pub excluded_by_cap: usize,
    pub excluded_unverified: usize,
    pub constants: Vec<BarrierConstants>,
    /// Domination entry: margin is the smallest `solution − w`.
    pub report: ValidationReport,
}

/// Max over the `U` family for every seed and `ε`, compared against a solution field.
pub fn perron_envelope(problem: &ProblemInstance, solution: &[f64], cfg: &EnvelopeConfig) -> Result<Envelope> {
    check_len(problem, solution)?;
    if cfg.x_hat.is_empty() || cfg.eps.is_empty() {
        return Err(Error::Barrier("empty barrier family".into()));
    }
    if cfg.eps.iter().any(|e| !(*e > 0.0)) || cfg.eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Barrier("ε ladder must be positive and strictly decreasing".into()));
    }
    let grid = &problem.grid;
    let m = problem.m();
    let constants: Vec<BarrierConstants> =
        cfg.x_hat.par_iter().map(|&x| compute_barrier_constants(problem, x, &cfg.settings)).collect::<Result<_>>()?;

    let compared = |f: &mut dyn FnMut(usize)| {
        for slice in 0..grid.ny() - 1 {
            for s in grid.closure_nodes() {
                f(grid.node(slice, s));
            }
        }
    };
    let cap = match cfg.cap {
        Some(c) => c,
        None => {
            let mut cap = f64::NEG_INFINITY;
            for k in &constants {
                for i in 0..m {
                    let p = BarrierParams::new(k, problem, i, cfg.eps[0])?;
                    compared(&mut |node| {
                        cap = eval_barrier_pair(&p, problem, node).1.into_iter().fold(cap, f64::max);
                    });
                }
            }
            cap
        }
    };

    let members: Vec<(usize, f64)> = (0..constants.len()).flat_map(|k| cfg.eps.iter().map(move |&e| (k, e))).collect();
    let fields: Vec<Result<(Option<Vec<f64>>, bool)>> = members
        .par_iter()
        .map(|&(k, eps)| {
            let p = BarrierParams::new(&constants[k], problem, 0, eps)?;
            let (u, _) = barrier_fields(&p, problem);
            let mut over = false;
            compared(&mut |node| over |= u[node * m..(node + 1) * m].iter().any(|&v| v > cap));
            if over {
                return Ok((None, true));
            }
            let ok = verify_subsupersolution(problem, &u, Role::Sub, cfg.tol)?.passed();
            Ok((ok.then_some(u), false))
        })
        .collect();

    let mut w = vec![f64::NEG_INFINITY; grid.len() * m];
    let (mut admitted, mut by_cap, mut unverified) = (0, 0, 0);
    for r in fields {
        match r? {
            (Some(u), _) => {
                admitted += 1;
                for (a, b) in w.iter_mut().zip(&u) {
                    *a = a.max(*b);
                }
            }
            (None, true) => by_cap += 1,
            (None, false) => unverified += 1,
        }
    }

    let mut gap = vec![f64::NAN; grid.len() * m];
    let mut t = Tracker::new(Axiom::Comparison, -cfg.tol);
    compared(&mut |node| {
        for j in 0..m {
            let idx = node * m + j;
            gap[idx] = solution[idx] - w[idx];
            t.observe(gap[idx], || {
                Witness::at(node, grid.location(node)).modes([j + 1]).value("w", w[idx]).value("solution", solution[idx])
            });
        }
    });
    let mut entry = t.finish();
    entry.note = Some(format!("{admitted} members admitted, {by_cap} above cap {cap:e}, {unverified} failed the subsolution test"));
    let mut report = ValidationReport::default();
    report.push(entry);
    Ok(Envelope { w, gap, cap, members: admitted, excluded_by_cap: by_cap, excluded_unverified: unverified, constants, report })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::Domain;
    use crate::operators::{LinearTerms, OperatorSpec};
    use crate::solver::{solve_family, SolveParams};
    use crate::switching::{ProblemData, SwitchingCosts};

    fn problem(nx: usize, ny: usize, m: usize, op: OperatorSpec, cost: f64, g: fn(usize, &[f64]) -> f64) -> ProblemInstance {
        let grid = Arc::new(Grid::build(Domain::new(vec![(0.0, 1.0)], 1.0).unwrap(), &[nx], ny).unwrap());
        let costs = SwitchingCosts::from_fn(&grid, m, |i, j, _, _| if i == j { 0.0 } else { cost }).unwrap();
        let data = ProblemData::from_fn(&grid, m, g, |_, _, _| 0.0).unwrap();
        ProblemInstance::new(grid, vec![op], costs, data).unwrap()
    }

    fn sine(nx: usize, m: usize) -> ProblemInstance {
        let h = crate::operators::Coef::Expr(crate::expr::Expr::parse("-(1 + pi*pi) * sin(pi*x1)", 1).unwrap());
        let op = OperatorSpec::LinearDiagonal(LinearTerms::new(vec![1.0.into()], vec![0.0.into()], 1.0, h));
        problem(nx, 9, m, op, 1.0, |_, x| (std::f64::consts::PI * x[0]).sin())
    }

    fn zero(nx: usize) -> ProblemInstance {
        problem(nx, 5, 2, OperatorSpec::LinearDiagonal(LinearTerms::constant(&[1.0], 1.0, 0.0)), 1.0, |_, _| 0.0)
    }

    #[test]
    fn phi_profiles() {
        let grid = Grid::build(Domain::new(vec![(0.0, 1.0)], 1.0).unwrap(), &[5], 3).unwrap();
        let (phi, delta) = choose_phi(&grid, 2, PhiKind::Quadratic);
        assert_eq!(phi.eval(&[1.0]), 1.25);
        assert_eq!(delta, 1.0);
        let min = (0..5).map(|s| phi.eval(&grid.coords(s))).fold(f64::INFINITY, f64::min);
        assert_eq!(min, phi.eval(&[0.5]));
        let (c, _) = choose_phi(&grid, 1, PhiKind::Constant);
        assert!((0..5).all(|s| c.eval(&grid.coords(s)) == 1.0));
    }

    #[test]
    fn positive_k1_needs_no_bend() {
        let p = zero(9);
        let k = compute_barrier_constants(&p, 4, &BarrierSettings::default()).unwrap();
        assert_eq!(k.b_tilde, 0.0);
        assert_eq!(k.kappa, 1.0);
        assert_eq!(k.b, k.b_tilde);
    }

    #[test]
    fn pinch_is_two_eps() {
        let p = sine(17, 2);
        let k = compute_barrier_constants(&p, 5, &BarrierSettings { c: CPolicy::Auto, ..Default::default() }).unwrap();
        for eps in [1.0, 0.1, 0.01, 0.001] {
            for i in 0..2 {
                let bp = BarrierParams::new(&k, &p, i, eps).unwrap();
                let (u, v) = eval_barrier_pair(&bp, &p, p.grid.node(0, 5));
                assert!((v[i] - u[i] - 2.0 * eps).abs() <= 1e-12);
                assert!(u[i] < p.data.g(5, i) && p.data.g(5, i) < v[i]);
            }
        }
    }

    #[test]
    fn bend_is_exp_times_square() {
        let p = zero(9);
        let k = BarrierConstants {
            x_hat: 4,
            phi: choose_phi(&p.grid, 4, PhiKind::Constant).0,
            a: 0.0,
            delta: 1.0,
            r: 0.0,
            b_tilde: 0.0,
            b: 1.0,
            kappa: 1.0,
            c: 0.0,
            passes: 0,
            notes: vec![],
        };
        let bp = BarrierParams::new(&k, &p, 0, 0.1).unwrap();
        for s in 0..9 {
            let node = p.grid.node(2, s);
            let x = p.grid.coords(s)[0];
            let v = eval_barrier_pair(&bp, &p, node).1[0] - eval_barrier_pair(&bp, &p, p.grid.node(2, 4)).1[0];
            assert!((v - std::f64::consts::E * (x - 0.5).powi(2)).abs() <= 1e-12);
        }
    }

    #[test]
    fn shifted_solution_is_super_not_sub() {
        for m in [1, 2] {
            let p = sine(17, m);
            let sol = solve_family(&p, &SolveParams::default()).unwrap();
            let up: Vec<f64> = sol.values.iter().map(|v| v + 1.0).collect();
            assert!(verify_subsupersolution(&p, &sol.values, Role::Sub, 1e-8).unwrap().passed());
            assert!(verify_subsupersolution(&p, &sol.values, Role::Super, 1e-8).unwrap().passed());
            assert!(verify_subsupersolution(&p, &up, Role::Super, 1e-8).unwrap().passed());
            let sub = verify_subsupersolution(&p, &up, Role::Sub, 1e-8).unwrap();
            let eq = sub.get(Axiom::Equation).unwrap();
            assert!(!eq.passed);
            assert!(eq.margin <= -1.0 + 1e-9, "margin {}", eq.margin);
        }
    }

    #[test]
    fn barriers_bracket_the_solution() {
        let p = sine(17, 2);
        let sol = solve_family(&p, &SolveParams::default()).unwrap();
        let settings = BarrierSettings { c: CPolicy::Auto, ..Default::default() };
        for x_hat in [0, 3, 8, 16] {
            let k = compute_barrier_constants(&p, x_hat, &settings).unwrap();
            for eps in [1.0, 0.1, 0.01] {
                for i in 0..2 {
                    let (u, v) = barrier_fields(&BarrierParams::new(&k, &p, i, eps).unwrap(), &p);
                    let u = VerifiedSub::verify(&p, u, 1e-8).unwrap();
                    let v = VerifiedSuper::verify(&p, v, 1e-8).unwrap();
                    let s_sup = VerifiedSuper::verify(&p, sol.values.clone(), 1e-8).unwrap();
                    let s_sub = VerifiedSub::verify(&p, sol.values.clone(), 1e-8).unwrap();
                    assert!(comparison_check(&p, &u, &s_sup, 1e-8).unwrap().entry.passed);
                    assert!(comparison_check(&p, &s_sub, &v, 1e-8).unwrap().entry.passed);
                    assert!(comparison_check(&p, &u, &v, 1e-8).unwrap().entry.passed);
                }
            }
        }
    }

    #[test]
    fn unverified_fields_are_refused() {
        let p = sine(9, 1);
        let sol = solve_family(&p, &SolveParams::default()).unwrap();
        let up: Vec<f64> = sol.values.iter().map(|v| v + 1.0).collect();
        assert!(matches!(VerifiedSub::verify(&p, up, 1e-8), Err(Error::Refused(_))));
        let s = VerifiedSub::verify(&p, sol.values.clone(), 1e-8).unwrap();
        let t = VerifiedSuper::verify(&p, sol.values.clone(), 1e-8).unwrap();
        let c = comparison_check(&p, &s, &t, 1e-8).unwrap();
        assert!(c.entry.passed);
        assert_eq!(c.entry.margin, 0.0);
    }

    #[test]
    fn quadratic_profile_with_negative_a() {
        let op = OperatorSpec::LinearDiagonal(LinearTerms::constant(&[1.0], 1.0, 0.0));
        let p = problem(17, 9, 2, op, 1.0, |_, _| 0.0);
        let settings = BarrierSettings { a: -2.0, phi: PhiKind::Quadratic, b_floor: 1.0, c: CPolicy::Auto, ..Default::default() };
        let k = compute_barrier_constants(&p, 8, &settings).unwrap();
        assert!(k.b >= k.b_tilde && k.b_tilde > 0.0 && k.kappa >= 1.0);
        for i in 0..2 {
            let (u, v) = barrier_fields(&BarrierParams::new(&k, &p, i, 0.01).unwrap(), &p);
            assert!(verify_subsupersolution(&p, &u, Role::Sub, 1e-8).unwrap().passed());
            assert!(verify_subsupersolution(&p, &v, Role::Super, 1e-8).unwrap().passed());
        }
    }

    #[test]
    fn kappa_grows_with_negative_a() {
        let op = OperatorSpec::LinearDiagonal(LinearTerms::constant(&[1.0], 1.0, 0.0));
        let p = problem(17, 5, 2, op, 1.0, |_, _| 0.0);
        let mut last = 0.0;
        for a in [-0.5, -1.0, -2.0, -4.0, -8.0, -16.0] {
            let s = BarrierSettings { a, phi: PhiKind::Quadratic, b_floor: 1.0, ..Default::default() };
            let k = compute_barrier_constants(&p, 5, &s).unwrap();
            assert!(k.kappa >= last);
            last = k.kappa;
        }
    }

    #[test]
    fn negative_a_keeps_b_positive() {
        // k1 + kU = 2A(φ − φ(x̂)) < 0 away from the seed, so B̃ > 0 and κ stays defined without a floor.
        let op = OperatorSpec::LinearDiagonal(LinearTerms::constant(&[1.0], 1.0, 0.0));
        let p = problem(9, 3, 1, op, 0.0, |_, x| 1.0 - (x[0] - 0.5).powi(2));
        let s = BarrierSettings { a: -0.5, phi: PhiKind::Quadratic, ..Default::default() };
        let k = compute_barrier_constants(&p, 4, &s).unwrap();
        assert!(k.b_tilde > 0.0 && k.kappa >= 1.0);
    }

    #[test]
    fn theta_identities() {
        let p = sine(17, 2);
        let sol = solve_family(&p, &SolveParams::default()).unwrap();
        let grid = &p.grid;
        for theta in [1.0, 0.1, 0.01] {
            let tp = ThetaParams::new(theta, grid.length()).unwrap();
            let mv = theta_modify(grid, 2, &sol.values, tp);
            assert!(mv.iter().zip(&sol.values).take(grid.node(grid.ny() - 1, 0) * 2).all(|(a, b)| a < b));
            let (_, pde0, gap0) = residuals(&p, &sol.values);
            for slice in grid.interior_slices() {
                let u = sol.slice_values(slice);
                let ut = theta_modify_slice(grid, &u, slice, tp).unwrap();
                let sys = SliceSystem::new(&p, slice);
                for (k, &s) in sys.nodes().iter().enumerate() {
                    let idx = grid.node(slice, s) * 2;
                    for i in 0..2 {
                        let (pde, gap) = sys.factors(&ut, k, i);
                        assert!((gap - gap0[idx + i]).abs() <= 1e-12);
                        assert!((pde0[idx + i] - pde - tp.shift(grid.y(slice))).abs() <= 1e-12);
                    }
                }
            }
            assert!(theta_modify_slice(grid, &sol.slice_values(0), grid.ny() - 1, tp).is_err());
        }
        assert!(ThetaParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn singleton_envelope_on_three_nodes() {
        let op = OperatorSpec::LinearDiagonal(LinearTerms::constant(&[1.0], 1.0, -1.0));
        let p = problem(3, 4, 1, op, 0.0, |_, _| 0.0);
        let sol = solve_family(&p, &SolveParams::default()).unwrap();
        let cfg = EnvelopeConfig {
            settings: BarrierSettings { c: CPolicy::Auto, ..Default::default() },
            ..EnvelopeConfig::new(vec![0.5], vec![1])
        };
        let env = perron_envelope(&p, &sol.values, &cfg).unwrap();
        assert_eq!(env.members, 1);
        let k = &env.constants[0];
        let (u, _) = barrier_fields(&BarrierParams::new(k, &p, 0, 0.5).unwrap(), &p);
        let last = p.grid.node(p.grid.ny() - 1, 0);
        assert_eq!(&env.w[..last], &u[..last]);
        assert!(env.report.passed());
        assert!(env.gap.iter().filter(|g| !g.is_nan()).all(|&g| g >= -1e-9));
    }

    #[test]
    fn envelope_rises_as_eps_falls() {
        let p = sine(17, 2);
        let sol = solve_family(&p, &SolveParams::default()).unwrap();
        let settings = BarrierSettings { c: CPolicy::Auto, ..Default::default() };
        let mut prev: Option<Vec<f64>> = None;
        for ladder in [vec![1.0], vec![1.0, 0.1], vec![1.0, 0.1, 0.01]] {
            let cfg = EnvelopeConfig { settings: settings.clone(), ..EnvelopeConfig::new(ladder, vec![4, 8]) };
            let env = perron_envelope(&p, &sol.values, &cfg).unwrap();
            assert!(env.report.passed());
            if let Some(w) = &prev {
                assert!(env.w.iter().zip(w).all(|(a, b)| a >= b));
            }
            prev = Some(env.w);
        }
        let empty = EnvelopeConfig::new(vec![0.1], vec![]);
        assert!(perron_envelope(&p, &sol.values, &empty).unwrap_err().to_string().contains("empty barrier family"));
    }
}
