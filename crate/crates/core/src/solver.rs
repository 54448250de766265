//! Per-slice solution of `min{F_h[u_i], u_i − M_i u} = 0` with Dirichlet data.

use std::sync::Arc;
use std::time::Instant;

use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use faer::Col;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::{discretize_operator, DiscreteOperator};
use crate::problem::ProblemInstance;
use crate::report::Axiom;
use crate::switching::{switch_target, validate_cost_axioms, validate_data_axioms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    ValueIteration,
    PolicyIteration,
}

/// Constant initial iterate: a discrete subsolution (`Low`) or supersolution (`High`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Start {
    Low,
    High,
}

#[derive(Debug, Clone)]
pub struct SolveParams {
    pub tol: f64,
    /// Defaults to 10⁶ sweeps for value iteration and 100 steps for policy iteration.
    pub max_iter: Option<usize>,
    pub method: Method,
    /// Gauss–Seidel relaxation in `(0, 1]`.
    pub relaxation: f64,
    pub start: Start,
    pub contact_tol: f64,
    /// Skip the O2–O5 gate.
    pub force: bool,
    /// Δ₀ above this adds a warning to the diagnostics.
    pub delta0_warn: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            method: Method::PolicyIteration,
            relaxation: 1.0,
            start: Start::Low,
            contact_tol: 1e-8,
            force: false,
            delta0_warn: 1e-2,
        }
    }
}

impl SolveParams {
    pub fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or(match self.method {
            Method::ValueIteration => 1_000_000,
            Method::PolicyIteration => 100,
        })
    }

    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Usage(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Usage(format!("relaxation must lie in (0, 1], got {}", self.relaxation)));
        }
        if self.max_iter == Some(0) {
            return Err(Error::Usage("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Discrete system of one slice: stencils per mode, costs and boundary values.
#[derive(Debug, Clone)]
pub struct SliceSystem<'a> {
    pub grid: &'a Grid,
    pub slice: usize,
    pub m: usize,
    pub ops: Vec<DiscreteOperator>,
    /// `m × m` costs per spatial node.
    costs: &'a [f64],
    /// Mode-major frame holding `f` on boundary nodes and 0 elsewhere.
    frame: Vec<Vec<f64>>,
    /// Interior position of each spatial node, `usize::MAX` otherwise.
    position: Vec<usize>,
}

impl<'a> SliceSystem<'a> {
    pub fn new(problem: &'a ProblemInstance, slice: usize) -> Self {
        let grid = &*problem.grid;
        let m = problem.m();
        let ns = grid.spatial_len();
        let ops = problem.operators.iter().map(|op| discretize_operator(op, grid, slice)).collect();
        let base = grid.node(slice, 0);
        let costs = &problem.costs.values()[base * m * m..(base + ns) * m * m];
        let mut frame = vec![vec![0.0; ns]; m];
        for s in grid.boundary_nodes() {
            for (i, col) in frame.iter_mut().enumerate() {
                col[s] = problem.data.f(base + s, i);
            }
        }
        let mut position = vec![usize::MAX; ns];
        for (k, &s) in grid.interior_nodes().iter().enumerate() {
            position[s] = k;
        }
        Self { grid, slice, m, ops, costs, frame, position }
    }

    pub fn nodes(&self) -> &[usize] {
        self.grid.interior_nodes()
    }

    pub fn cost(&self, s: usize) -> &[f64] {
        &self.costs[s * self.m * self.m..(s + 1) * self.m * self.m]
    }

    pub fn boundary_value(&self, s: usize, i: usize) -> f64 {
        self.frame[i][s]
    }

    /// `M_i u` at spatial node `s` of a mode-major field.
    pub fn obstacle(&self, u: &[Vec<f64>], s: usize, i: usize) -> f64 {
        let c = self.cost(s);
        let mut best = f64::NEG_INFINITY;
        for j in 0..self.m {
            if j != i {
                best = best.max(u[j][s] - c[i * self.m + j]);
            }
        }
        best
    }

    /// `(F_h[u_i], u_i − M_i u)` at interior position `k`.
    pub fn factors(&self, u: &[Vec<f64>], k: usize, i: usize) -> (f64, f64) {
        let s = self.nodes()[k];
        (self.ops[i].apply(k, &u[i]), u[i][s] - self.obstacle(u, s, i))
    }

    /// Constant per mode, forming a discrete subsolution (`Low`) or supersolution (`High`).
    pub fn start_levels(&self, start: Start, g: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let bnd: Vec<usize> = self.grid.boundary_nodes().collect();
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for i in 0..m {
            for &s in &bnd {
                lo = lo.min(self.frame[i][s]);
                hi = hi.max(self.frame[i][s]);
            }
            let op = &self.ops[i];
            for (idx, row) in op.rows.iter().enumerate() {
                let level = -row.constant / op.gammas[idx % op.controls];
                lo = lo.min(level);
                hi = hi.max(level);
            }
        }
        for &v in g {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        match start {
            Start::Low => Ok(vec![lo - 0.01 * (1.0 + lo.abs()); m]),
            Start::High => {
                let pi = self.cost_potentials()?;
                let pmin = pi.iter().copied().fold(0.0, f64::min);
                let k = hi - pmin;
                let k = k + 0.01 * (1.0 + k.abs());
                Ok(pi.iter().map(|p| k + p).collect())
            }
        }
    }

    /// Potentials with `π_j − π_i ≤ min over the slice of c_ij`, by Bellman–Ford.
    fn cost_potentials(&self) -> Result<Vec<f64>> {
        let m = self.m;
        let mut cmin = vec![f64::INFINITY; m * m];
        for s in self.grid.closure_nodes() {
            for (a, &v) in cmin.iter_mut().zip(self.cost(s)) {
                *a = a.min(v);
            }
        }
        let mut d = vec![0.0; m];
        for round in 0..=m {
            let mut changed = false;
            for i in 0..m {
                for j in 0..m {
                    if i != j && d[i] + cmin[i * m + j] < d[j] {
                        d[j] = d[i] + cmin[i * m + j];
                        changed = true;
                    }
                }
            }
            if !changed {
                return Ok(d);
            }
            if round == m {
                break;
            }
        }
        Err(Error::Data(format!(
            "slice {}: slice-wise minimal costs contain a negative cycle; no constant supersolution start",
            self.slice
        )))
    }

    /// Mode-major field at constant levels with boundary data in place.
    pub fn constant_field(&self, levels: &[f64]) -> Vec<Vec<f64>> {
        let mut u = self.frame.clone();
        for (i, col) in u.iter_mut().enumerate() {
            for &s in self.nodes() {
                col[s] = levels[i];
            }
        }
        u
    }

    /// Worst `|min|` residual and the worst negative part of either factor.
    pub fn residual_norms(&self, u: &[Vec<f64>]) -> (f64, f64) {
        let mut worst = 0.0f64;
        let mut neg = 0.0f64;
        for k in 0..self.nodes().len() {
            for i in 0..self.m {
                let (p, g) = self.factors(u, k, i);
                let r = p.min(g);
                worst = worst.max(r.abs());
                neg = neg.max(-p).max(-g);
                if r.is_nan() {
                    worst = f64::INFINITY;
                }
            }
        }
        (worst, neg)
    }
}

/// Converged values of one slice.
#[derive(Debug, Clone)]
pub struct SliceSolution {
    pub slice: usize,
    /// Mode-major values over the spatial nodes.
    pub values: Vec<Vec<f64>>,
    pub iterations: usize,
    pub update: f64,
    pub residual: f64,
    /// Gauss–Seidel sweeps spent after policy iteration.
    pub polish_sweeps: usize,
}

/// One Gauss–Seidel sweep in lexicographic order; returns the sup-norm update.
pub(crate) fn gs_sweep(sys: &SliceSystem, u: &mut [Vec<f64>], relaxation: f64) -> f64 {
    let mut upd = 0.0f64;
    for (k, &s) in sys.nodes().iter().enumerate() {
        for i in 0..sys.m {
            let root = sys.ops[i].local_root(k, &u[i]);
            let cand = root.max(sys.obstacle(u, s, i));
            let old = u[i][s];
            let new = if relaxation == 1.0 { cand } else { old + relaxation * (cand - old) };
            upd = upd.max((new - old).abs());
            u[i][s] = new;
        }
    }
    upd
}

/// One Jacobi sweep: every update reads the previous iterate only.
pub(crate) fn jacobi_sweep(sys: &SliceSystem, u: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut next = u.to_vec();
    let mut upd = 0.0f64;
    for (k, &s) in sys.nodes().iter().enumerate() {
        for i in 0..sys.m {
            let cand = sys.ops[i].local_root(k, &u[i]).max(sys.obstacle(u, s, i));
            upd = upd.max((cand - u[i][s]).abs());
            next[i][s] = cand;
        }
    }
    (next, upd)
}

/// Switching chains closed among modes whose obstacle factor is below `tol` and below the PDE factor.
fn detect_switch_cycle(sys: &SliceSystem, u: &[Vec<f64>], tol: f64) -> Option<(usize, Vec<usize>, f64)> {
    let m = sys.m;
    if m < 2 {
        return None;
    }
    let mut target = vec![None; m];
    let mut vals = vec![0.0; m];
    for (k, &s) in sys.nodes().iter().enumerate() {
        for j in 0..m {
            vals[j] = u[j][s];
        }
        for i in 0..m {
            let (p, g) = sys.factors(u, k, i);
            target[i] = (g <= tol && g < p).then(|| switch_target(&vals, sys.cost(s), i)).flatten();
        }
        if let Some((cycle, sum)) = find_cycle(&target, sys.cost(s), m) {
            if sum <= 0.0 {
                return Some((sys.grid.node(sys.slice, s), cycle.iter().map(|c| c + 1).collect(), sum));
            }
        }
    }
    None
}

/// First cycle of the functional graph `i → target[i]`, as 0-based modes closed at the end.
fn find_cycle(target: &[Option<usize>], c: &[f64], m: usize) -> Option<(Vec<usize>, f64)> {
    for start in 0..m {
        let mut path = vec![start];
        let mut cur = start;
        while let Some(next) = target[cur] {
            if let Some(pos) = path.iter().position(|&p| p == next) {
                let mut cycle = path[pos..].to_vec();
                cycle.push(next);
                let sum = cycle.windows(2).map(|w| c[w[0] * m + w[1]]).sum();
                return Some((cycle, sum));
            }
            path.push(next);
            cur = next;
        }
    }
    None
}

fn initial_field(sys: &SliceSystem, params: &SolveParams, init: Option<&[Vec<f64>]>, g: &[f64]) -> Result<Vec<Vec<f64>>> {
    match init {
        Some(u0) => {
            let mut u = sys.frame.clone();
            for i in 0..sys.m {
                for &s in sys.nodes() {
                    u[i][s] = u0[i][s];
                }
            }
            Ok(u)
        }
        None => Ok(sys.constant_field(&sys.start_levels(params.start, g)?)),
    }
}

fn converged(sys: &SliceSystem, u: &[Vec<f64>], tol: f64) -> Option<f64> {
    let (r, neg) = sys.residual_norms(u);
    (r <= tol && neg <= tol).then_some(r)
}

fn value_iteration(sys: &SliceSystem, params: &SolveParams, mut u: Vec<Vec<f64>>) -> Result<SliceSolution> {
    let max_iter = params.max_iter();
    let mut upd = f64::INFINITY;
    for sweep in 1..=max_iter {
        upd = gs_sweep(sys, &mut u, params.relaxation);
        if sweep % 64 == 0 || upd <= params.tol {
            if let Some((node, cycle, sum)) = detect_switch_cycle(sys, &u, params.contact_tol.max(params.tol)) {
                return Err(Error::SwitchCycle { node, cycle, sum });
            }
        }
        if upd <= params.tol {
            if let Some(residual) = converged(sys, &u, params.tol) {
                return Ok(SliceSolution { slice: sys.slice, values: u, iterations: sweep, update: upd, residual, polish_sweeps: 0 });
            }
        }
    }
    let residual = sys.residual_norms(&u).0;
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
        best: Box::new(SliceSolution { slice: sys.slice, values: u, iterations: max_iter, update: upd, residual, polish_sweeps: 0 }),
    })
}

/// Jacobi value iteration from the low start; the reference for policy iteration.
pub fn value_iteration_oracle(sys: &SliceSystem, tol: f64, max_iter: usize) -> Result<SliceSolution> {
    let mut u = sys.constant_field(&sys.start_levels(Start::Low, &[])?);
    let mut upd = f64::INFINITY;
    for sweep in 1..=max_iter {
        let (next, d) = jacobi_sweep(sys, &u);
        u = next;
        upd = d;
        if upd <= tol {
            if let Some(residual) = converged(sys, &u, tol) {
                return Ok(SliceSolution { slice: sys.slice, values: u, iterations: sweep, update: upd, residual, polish_sweeps: 0 });
            }
        }
    }
    let residual = sys.residual_norms(&u).0;
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
        best: Box::new(SliceSolution { slice: sys.slice, values: u, iterations: max_iter, update: upd, residual, polish_sweeps: 0 }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Pde(usize),
    Switch(usize),
}

fn improve_policy(sys: &SliceSystem, u: &[Vec<f64>], tol: f64) -> Result<Vec<Regime>> {
    let m = sys.m;
    let mut policy = Vec::with_capacity(sys.nodes().len() * m);
    let mut vals = vec![0.0; m];
    let mut gaps = vec![0.0; m];
    let mut targets = vec![None; m];
    for (k, &s) in sys.nodes().iter().enumerate() {
        for j in 0..m {
            vals[j] = u[j][s];
        }
        let c = sys.cost(s);
        let first = policy.len();
        for i in 0..m {
            let (p, ctrl) = sys.ops[i].apply_with_control(k, &u[i]);
            let g = u[i][s] - sys.obstacle(u, s, i);
            gaps[i] = g;
            let pde = p <= g || (p.abs() <= tol && g.abs() <= tol);
            targets[i] = if pde { None } else { switch_target(&vals, c, i) };
            policy.push(match targets[i] {
                None => Regime::Pde(ctrl),
                Some(j) => Regime::Switch(j),
            });
        }
        while let Some((cycle, sum)) = find_cycle(&targets, c, m) {
            if sum <= 0.0 {
                return Err(Error::SwitchCycle { node: sys.grid.node(sys.slice, s), cycle: cycle.iter().map(|v| v + 1).collect(), sum });
            }
            let members = &cycle[..cycle.len() - 1];
            let mut pick = members[0];
            for &i in members {
                if gaps[i] > gaps[pick] || (gaps[i] == gaps[pick] && i < pick) {
                    pick = i;
                }
            }
            targets[pick] = None;
            policy[first + pick] = Regime::Pde(sys.ops[pick].apply_with_control(k, &u[pick]).1);
        }
    }
    Ok(policy)
}

fn solve_policy(sys: &SliceSystem, policy: &[Regime], u: &mut [Vec<f64>]) -> Result<()> {
    let m = sys.m;
    let n = sys.nodes().len() * m;
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(n * 7);
    let mut rhs = Col::<f64>::zeros(n);
    for (k, &s) in sys.nodes().iter().enumerate() {
        for i in 0..m {
            let row = k * m + i;
            match policy[row] {
                Regime::Pde(c) => {
                    let op = &sys.ops[i];
                    let st = &op.rows[k * op.controls + c];
                    let nbr = &op.neighbors[k];
                    let mut b = -st.constant;
                    let mut diag = st.diag;
                    for q in 0..6 {
                        if st.nb[q] == 0.0 {
                            continue;
                        }
                        let t = nbr[q];
                        if t == s {
                            diag += st.nb[q];
                        } else if sys.position[t] != usize::MAX {
                            trip.push((row, sys.position[t] * m + i, st.nb[q]));
                        } else {
                            b -= st.nb[q] * sys.frame[i][t];
                        }
                    }
                    trip.push((row, row, diag));
                    rhs[row] = b;
                }
                Regime::Switch(j) => {
                    trip.push((row, row, 1.0));
                    trip.push((row, k * m + j, -1.0));
                    rhs[row] = -sys.cost(s)[i * m + j];
                }
            }
        }
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::Linear(format!("slice {}: assembly failed: {e:?}", sys.slice)))?;
    let lu = a.sp_lu().map_err(|e| Error::Linear(format!("slice {}: factorization failed: {e:?}", sys.slice)))?;
    lu.solve_in_place(&mut rhs);
    for (k, &s) in sys.nodes().iter().enumerate() {
        for i in 0..m {
            let v = rhs[k * m + i];
            if !v.is_finite() {
                return Err(Error::Linear(format!("slice {}: non-finite policy solution", sys.slice)));
            }
            u[i][s] = v;
        }
    }
    Ok(())
}

fn policy_iteration(sys: &SliceSystem, params: &SolveParams, mut u: Vec<Vec<f64>>) -> Result<SliceSolution> {
    let max_iter = params.max_iter();
    let mut prev: Option<Vec<Regime>> = None;
    let mut steps = 0;
    let mut stable = false;
    let mut upd = f64::INFINITY;
    while steps < max_iter {
        let policy = improve_policy(sys, &u, params.tol)?;
        if prev.as_ref() == Some(&policy) {
            stable = true;
            break;
        }
        let before = u.clone();
        solve_policy(sys, &policy, &mut u)?;
        steps += 1;
        upd = before.iter().zip(&u).flat_map(|(a, b)| a.iter().zip(b)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prev = Some(policy);
        if upd <= params.tol && converged(sys, &u, params.tol).is_some() {
            stable = true;
            break;
        }
    }
    // Rounding in the direct solve can leave the residual a few ulps above tol; finish with sweeps.
    let mut polish = 0;
    let polish_cap = 100_000;
    loop {
        if let Some(residual) = converged(sys, &u, params.tol) {
            if let Some((node, cycle, sum)) = detect_switch_cycle(sys, &u, params.contact_tol.max(params.tol)) {
                return Err(Error::SwitchCycle { node, cycle, sum });
            }
            return Ok(SliceSolution { slice: sys.slice, values: u, iterations: steps, update: upd, residual, polish_sweeps: polish });
        }
        if polish >= polish_cap || (!stable && steps >= max_iter && polish >= polish_cap) {
            break;
        }
        upd = gs_sweep(sys, &mut u, params.relaxation);
        polish += 1;
    }
    let residual = sys.residual_norms(&u).0;
    Err(Error::NotConverged {
        iterations: steps,
        residual,
        best: Box::new(SliceSolution { slice: sys.slice, values: u, iterations: steps, update: upd, residual, polish_sweeps: polish }),
    })
}

/// Solves one slice. `g` only enters the start levels.
pub fn solve_slice(sys: &SliceSystem, params: &SolveParams, init: Option<&[Vec<f64>]>, g: &[f64]) -> Result<SliceSolution> {
    params.check()?;
    for op in &sys.ops {
        op.check_monotone()?;
    }
    let u = initial_field(sys, params, init, g)?;
    match params.method {
        Method::ValueIteration => value_iteration(sys, params, u),
        Method::PolicyIteration => policy_iteration(sys, params, u),
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveMeta {
    /// Iterations per solved slice (sweeps or policy steps).
    pub iterations: Vec<usize>,
    pub polish_sweeps: usize,
    pub max_update: f64,
    pub max_residual: f64,
    pub wall_time: f64,
}

/// Values on every node, entry `node * m + i`.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub grid: Arc<Grid>,
    pub m: usize,
    pub values: Vec<f64>,
    /// `min{F_h[u_i], u_i − M_i u}` at interior nodes of interior slices, 0 elsewhere.
    pub residuals: Vec<f64>,
    pub pde: Vec<f64>,
    pub gap: Vec<f64>,
    pub contact: Vec<bool>,
    pub switch_target: Vec<Option<usize>>,
    pub meta: SolveMeta,
    /// `max_i max_x |u_i(y₁, x) − g_i(x)|`.
    pub delta0: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl SolutionField {
    pub fn value(&self, node: usize, i: usize) -> f64 {
        self.values[node * self.m + i]
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mode-major copy of one slice.
    pub fn slice_values(&self, slice: usize) -> Vec<Vec<f64>> {
        slice_of(&self.grid, self.m, &self.values, slice)
    }
}

pub(crate) fn slice_of(grid: &Grid, m: usize, values: &[f64], slice: usize) -> Vec<Vec<f64>> {
    let ns = grid.spatial_len();
    let base = grid.node(slice, 0);
    (0..m).map(|i| (0..ns).map(|s| values[(base + s) * m + i]).collect()).collect()
}

/// Gate on O2–O5 unless forced.
pub fn check_solvable(problem: &ProblemInstance) -> Result<()> {
    let mut rep = validate_cost_axioms(&problem.costs, &problem.grid, 0.0);
    rep.extend(validate_data_axioms(&problem.costs, &problem.data, &problem.grid));
    let required = [Axiom::O2, Axiom::O3, Axiom::O4, Axiom::O5];
    if let Some(e) = rep.failures().find(|e| required.contains(&e.axiom)) {
        return Err(Error::Refused(format!(
            "axiom {} fails (margin {:e}); rerun with --force-unvalidated to solve anyway",
            e.axiom, e.margin
        )));
    }
    Ok(())
}

/// Solves every interior slice independently; `init` is a full field, entry `node * m + i`.
pub fn solve_family_from(problem: &ProblemInstance, params: &SolveParams, init: Option<&[f64]>) -> Result<SolutionField> {
    params.check()?;
    if !params.force {
        check_solvable(problem)?;
    }
    let t0 = Instant::now();
    let grid = problem.grid.clone();
    let m = problem.m();
    let mut diagnostics = Vec::new();
    if grid.ny() <= 2 {
        diagnostics.push("no interior slices".to_string());
        return Ok(SolutionField {
            grid,
            m,
            values: Vec::new(),
            residuals: Vec::new(),
            pde: Vec::new(),
            gap: Vec::new(),
            contact: Vec::new(),
            switch_target: Vec::new(),
            meta: SolveMeta::default(),
            delta0: None,
            diagnostics,
        });
    }
    let g: Vec<f64> = grid.closure_nodes().flat_map(|s| (0..m).map(move |i| problem.data.g(s, i))).collect();
    let slices: Vec<usize> = grid.interior_slices().collect();
    let results: Vec<Result<SliceSolution>> = slices
        .par_iter()
        .map(|&slice| {
            let sys = SliceSystem::new(problem, slice);
            let init_slice = init.map(|f| slice_of(&grid, m, f, slice));
            solve_slice(&sys, params, init_slice.as_deref(), &g)
        })
        .collect();
    let mut solved = Vec::with_capacity(results.len());
    for r in results {
        solved.push(r?);
    }

    let ns = grid.spatial_len();
    let mut values = vec![0.0; grid.len() * m];
    for s in grid.closure_nodes() {
        for i in 0..m {
            values[grid.node(0, s) * m + i] = problem.data.g(s, i);
        }
    }
    for sol in &solved {
        for s in grid.closure_nodes() {
            for i in 0..m {
                values[grid.node(sol.slice, s) * m + i] = sol.values[i][s];
            }
        }
    }
    let last = grid.ny() - 1;
    for s in 0..ns {
        for i in 0..m {
            values[grid.node(last, s) * m + i] = values[grid.node(last - 1, s) * m + i];
        }
    }

    let mut field = SolutionField {
        grid: grid.clone(),
        m,
        values,
        residuals: Vec::new(),
        pde: Vec::new(),
        gap: Vec::new(),
        contact: Vec::new(),
        switch_target: Vec::new(),
        meta: SolveMeta {
            iterations: solved.iter().map(|s| s.iterations).collect(),
            polish_sweeps: solved.iter().map(|s| s.polish_sweeps).sum(),
            max_update: solved.iter().map(|s| s.update).fold(0.0, f64::max),
            max_residual: 0.0,
            wall_time: 0.0,
        },
        delta0: None,
        diagnostics,
    };
    let (res, pde, gap) = residuals(problem, &field.values);
    field.meta.max_residual = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    field.residuals = res;
    field.pde = pde;
    field.gap = gap;
    let (contact, targets) = extract_contact_sets(&field, problem, params.contact_tol);
    field.contact = contact;
    field.switch_target = targets;

    let mut d0 = 0.0f64;
    for s in grid.closure_nodes() {
        for i in 0..m {
            d0 = d0.max((field.value(grid.node(1, s), i) - problem.data.g(s, i)).abs());
        }
    }
    field.delta0 = Some(d0);
    if d0 > params.delta0_warn {
        field.diagnostics.push(format!(
            "warning: initial compatibility gap {d0:e} exceeds {:e}; g is not imposed on interior slices",
            params.delta0_warn
        ));
    }
    field.meta.wall_time = t0.elapsed().as_secs_f64();
    Ok(field)
}

pub fn solve_family(problem: &ProblemInstance, params: &SolveParams) -> Result<SolutionField> {
    solve_family_from(problem, params, None)
}

/// Recomputes `(min-form residual, F_h factor, obstacle factor)` for a full field, entry `node * m + i`.
pub fn residuals(problem: &ProblemInstance, values: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let grid = &problem.grid;
    let m = problem.m();
    let mut res = vec![0.0; grid.len() * m];
    let mut pde = vec![0.0; grid.len() * m];
    let mut gap = vec![0.0; grid.len() * m];
    let per_slice: Vec<Vec<(usize, f64, f64)>> = grid
        .interior_slices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&slice| {
            let sys = SliceSystem::new(problem, slice);
            let u = slice_of(grid, m, values, slice);
            let mut out = Vec::with_capacity(sys.nodes().len() * m);
            for (k, &s) in sys.nodes().iter().enumerate() {
                for i in 0..m {
                    let (p, g) = sys.factors(&u, k, i);
                    out.push((grid.node(slice, s) * m + i, p, g));
                }
            }
            out
        })
        .collect();
    for entries in per_slice {
        for (idx, p, g) in entries {
            res[idx] = p.min(g);
            pde[idx] = p;
            gap[idx] = g;
        }
    }
    (res, pde, gap)
}

/// Contact masks (`u_i − M_i u ≤ tol_c` at interior nodes of interior slices) and argmax switch targets.
pub fn extract_contact_sets(field: &SolutionField, problem: &ProblemInstance, tol_c: f64) -> (Vec<bool>, Vec<Option<usize>>) {
    let grid = &field.grid;
    let m = field.m;
    let mut contact = vec![false; grid.len() * m];
    let mut targets = vec![None; grid.len() * m];
    for slice in grid.interior_slices() {
        for &s in grid.interior_nodes() {
            let node = grid.node(slice, s);
            let u = &field.values[node * m..(node + 1) * m];
            let c = problem.costs.at(node);
            for i in 0..m {
                let gap = u[i] - crate::switching::eval_obstacle(u, c, i);
                contact[node * m + i] = gap <= tol_c;
                targets[node * m + i] = switch_target(u, c, i);
            }
        }
    }
    (contact, targets)
}
