//! Switching costs, initial and boundary data, the obstacle operator and the O-axiom validators.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::report::{Axiom, Tracker, ValidationReport, Witness};

/// `c_ij(y, x)` at every node; entry `(node * m + i) * m + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingCosts {
    m: usize,
    values: Vec<f64>,
}

impl SwitchingCosts {
    /// Samples `c(i, j, y, x)` (0-based modes) at every node of the closed domain; outside nodes hold 0.
    pub fn from_fn(grid: &Grid, m: usize, mut c: impl FnMut(usize, usize, f64, &[f64]) -> f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Data("mode count must be at least 1".into()));
        }
        let mut values = vec![0.0; grid.len() * m * m];
        let mut x = vec![0.0; grid.dim()];
        for slice in 0..grid.ny() {
            let y = grid.y(slice);
            for s in grid.closure_nodes() {
                grid.coords_into(s, &mut x);
                let base = grid.node(slice, s) * m * m;
                for i in 0..m {
                    for j in 0..m {
                        let v = c(i, j, y, &x);
                        if !v.is_finite() {
                            return Err(Error::Data(format!("c{}{} not finite at y={y} x={x:?}", i + 1, j + 1)));
                        }
                        values[base + i * m + j] = v;
                    }
                }
            }
        }
        Ok(Self { m, values })
    }

    /// Same matrix at every node.
    pub fn constant(grid: &Grid, matrix: &[Vec<f64>]) -> Result<Self> {
        Self::from_fn(grid, matrix.len(), |i, j, _, _| matrix[i][j])
    }

    pub fn from_values(m: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % (m * m), 0);
        Self { m, values }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// The `m × m` row-major matrix at a full node.
    pub fn at(&self, node: usize) -> &[f64] {
        let mm = self.m * self.m;
        &self.values[node * mm..(node + 1) * mm]
    }

    pub fn get(&self, node: usize, i: usize, j: usize) -> f64 {
        self.values[(node * self.m + i) * self.m + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Initial data `g` (entry `spatial * m + i`) and boundary data `f` (entry `node * m + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub m: usize,
    pub g: Vec<f64>,
    pub f: Vec<f64>,
}

impl ProblemData {
    pub fn from_fn(
        grid: &Grid,
        m: usize,
        mut g: impl FnMut(usize, &[f64]) -> f64,
        mut f: impl FnMut(usize, f64, &[f64]) -> f64,
    ) -> Result<Self> {
        let mut gv = vec![0.0; grid.spatial_len() * m];
        let mut fv = vec![0.0; grid.len() * m];
        let mut x = vec![0.0; grid.dim()];
        for s in grid.closure_nodes() {
            grid.coords_into(s, &mut x);
            for i in 0..m {
                let v = g(i, &x);
                if !v.is_finite() {
                    return Err(Error::Data(format!("g{} not finite at x={x:?}", i + 1)));
                }
                gv[s * m + i] = v;
            }
        }
        for slice in 0..grid.ny() {
            let y = grid.y(slice);
            for s in grid.boundary_nodes() {
                grid.coords_into(s, &mut x);
                for i in 0..m {
                    let v = f(i, y, &x);
                    if !v.is_finite() {
                        return Err(Error::Data(format!("f{} not finite at y={y} x={x:?}", i + 1)));
                    }
                    fv[grid.node(slice, s) * m + i] = v;
                }
            }
        }
        Ok(Self { m, g: gv, f: fv })
    }

    pub fn g(&self, spatial: usize, i: usize) -> f64 {
        self.g[spatial * self.m + i]
    }

    pub fn f(&self, node: usize, i: usize) -> f64 {
        self.f[node * self.m + i]
    }
}

/// `M_i u = max_{j≠i} (u_j − c_ij)` at one node; `−∞` when `m = 1`.
pub fn eval_obstacle(u: &[f64], c: &[f64], i: usize) -> f64 {
    let m = u.len();
    let mut best = f64::NEG_INFINITY;
    for j in 0..m {
        if j != i {
            best = best.max(u[j] - c[i * m + j]);
        }
    }
    best
}

/// Maximizing `j` of `u_j − c_ij` over `j ≠ i`, smallest index on ties.
pub fn switch_target(u: &[f64], c: &[f64], i: usize) -> Option<usize> {
    let m = u.len();
    let mut best: Option<(usize, f64)> = None;
    for j in 0..m {
        if j == i {
            continue;
        }
        let v = u[j] - c[i * m + j];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Minimum total cost over directed simple cycles of length ≥ 2, with a minimizing
/// cycle as 0-based modes (first mode repeated at the end). `None` when `m < 2`.
pub fn min_cycle_sum(c: &[f64], m: usize) -> Option<(f64, Vec<usize>)> {
    if m < 2 {
        return None;
    }
    if m <= 8 {
        let mut best = (f64::INFINITY, Vec::new());
        let mut path = Vec::with_capacity(m + 1);
        for start in 0..m {
            path.clear();
            path.push(start);
            dfs_cycles(c, m, start, 0.0, &mut path, &mut best);
        }
        Some(best)
    } else {
        Some(floyd_min_cycle(c, m))
    }
}

fn dfs_cycles(c: &[f64], m: usize, start: usize, sum: f64, path: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
    let cur = *path.last().unwrap();
    if path.len() >= 2 {
        let total = sum + c[cur * m + start];
        if total < best.0 {
            best.0 = total;
            best.1 = path.clone();
            best.1.push(start);
        }
    }
    // Cycles are rooted at their smallest mode.
    for next in start + 1..m {
        if !path.contains(&next) {
            path.push(next);
            dfs_cycles(c, m, start, sum + c[cur * m + next], path, best);
            path.pop();
        }
    }
}

/// Minimum closed walk of length ≥ 2. Equals the minimum simple cycle when that is positive;
/// otherwise it is also non-positive, so the O3 verdict is unchanged.
fn floyd_min_cycle(c: &[f64], m: usize) -> (f64, Vec<usize>) {
    let mut d = vec![f64::INFINITY; m * m];
    let mut next = vec![usize::MAX; m * m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                d[i * m + j] = c[i * m + j];
                next[i * m + j] = j;
            }
        }
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                let via = d[i * m + k] + d[k * m + j];
                if via < d[i * m + j] {
                    d[i * m + j] = via;
                    next[i * m + j] = next[i * m + k];
                }
            }
        }
    }
    let (mut best, mut at) = (f64::INFINITY, 0);
    for i in 0..m {
        if d[i * m + i] < best {
            best = d[i * m + i];
            at = i;
        }
    }
    let mut cycle = vec![at];
    let mut cur = next[at * m + at];
    while cur != at && cur != usize::MAX && cycle.len() <= m {
        cycle.push(cur);
        cur = next[cur * m + at];
    }
    cycle.push(at);
    (best, cycle)
}

fn node_location(grid: &Grid, node: usize) -> Vec<f64> {
    grid.location(node)
}

fn closure_full_nodes(grid: &Grid) -> impl Iterator<Item = usize> + '_ {
    (0..grid.ny()).flat_map(move |slice| grid.closure_nodes().map(move |s| grid.node(slice, s)))
}

/// O2 exactly, O3 as minimum cycle sum `> eta`, O4 over every triple.
pub fn validate_cost_axioms(costs: &SwitchingCosts, grid: &Grid, eta: f64) -> ValidationReport {
    let m = costs.m();
    let mut o2 = Tracker::new(Axiom::O2, 0.0);
    let mut o3 = Tracker::strict(Axiom::O3, 0.0);
    let mut o4 = Tracker::new(Axiom::O4, 0.0);
    for node in closure_full_nodes(grid) {
        let c = costs.at(node);
        for i in 0..m {
            let v = c[i * m + i];
            let margin = if v == 0.0 { 0.0 } else { -v.abs() };
            o2.observe(margin, || Witness::at(node, node_location(grid, node)).modes([i + 1]).value("c_ii", v));
        }
        if let Some((sum, cycle)) = min_cycle_sum(c, m) {
            o3.observe(sum - eta, || {
                Witness::at(node, node_location(grid, node)).modes(cycle.iter().map(|k| k + 1)).value("cycle_sum", sum).value("eta", eta)
            });
        }
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let (cij, cjk, cik) = (c[i * m + j], c[j * m + k], c[i * m + k]);
                    o4.observe(cij + cjk - cik, || {
                        Witness::at(node, node_location(grid, node))
                            .modes([i + 1, j + 1, k + 1])
                            .value("c_ik", cik)
                            .value("c_ij+c_jk", cij + cjk)
                    });
                }
            }
        }
    }
    let mut report = ValidationReport::default();
    report.push(o2.finish());
    let mut e3 = o3.finish();
    if m < 2 {
        e3.note = Some("no cycles for a single mode".into());
    }
    report.push(e3);
    report.push(o4.finish());
    report
}

/// O5 over every pair and closed-domain node, O6 from boundary extrema, O7 from interior extrema.
pub fn validate_data_axioms(costs: &SwitchingCosts, data: &ProblemData, grid: &Grid) -> ValidationReport {
    let m = costs.m();
    let mut report = ValidationReport::default();

    let mut o5 = Tracker::new(Axiom::O5, 0.0);
    for s in grid.closure_nodes() {
        let node = grid.node(0, s);
        for i in 0..m {
            for j in 0..m {
                let (gi, gj, cij) = (data.g(s, i), data.g(s, j), costs.get(node, i, j));
                o5.observe(gi - (gj - cij), || {
                    Witness::at(node, node_location(grid, node)).modes([i + 1, j + 1]).value("g_i", gi).value("g_j - c_ij", gj - cij)
                });
            }
        }
    }
    report.push(o5.finish());

    // O6: min c over all (i, j), y and boundary x  ≥  max f over i, y, boundary x  −  min g over i, boundary x.
    let mut o6 = Tracker::new(Axiom::O6, 0.0);
    let (mut cmin, mut cwit) = (f64::INFINITY, (0, 0, 0));
    let (mut fmax, mut fwit) = (f64::NEG_INFINITY, (0, 0));
    let (mut gmin, mut gwit) = (f64::INFINITY, (0, 0));
    for slice in 0..grid.ny() {
        for s in grid.boundary_nodes() {
            let node = grid.node(slice, s);
            for i in 0..m {
                for j in 0..m {
                    if costs.get(node, i, j) < cmin {
                        cmin = costs.get(node, i, j);
                        cwit = (node, i, j);
                    }
                }
                if data.f(node, i) > fmax {
                    fmax = data.f(node, i);
                    fwit = (node, i);
                }
            }
        }
    }
    for s in grid.boundary_nodes() {
        for i in 0..m {
            if data.g(s, i) < gmin {
                gmin = data.g(s, i);
                gwit = (grid.node(0, s), i);
            }
        }
    }
    if cmin.is_finite() {
        o6.observe(cmin - (fmax - gmin), || {
            Witness::at(cwit.0, node_location(grid, cwit.0))
                .modes([cwit.1 + 1, cwit.2 + 1])
                .value("min_c", cmin)
                .value("max_f", fmax)
                .value("max_f_mode", (fwit.1 + 1) as f64)
                .value("max_f_node", fwit.0 as f64)
                .value("min_g", gmin)
                .value("min_g_mode", (gwit.1 + 1) as f64)
                .value("min_g_node", gwit.0 as f64)
        });
    }
    report.push(o6.finish());

    // O7: for each (i, j), min over interior x of g_i plus min over interior (y, x̃) of c_ij.
    let mut o7 = Tracker::new(Axiom::O7, 0.0);
    let interior: Vec<usize> = grid.interior_nodes().to_vec();
    for i in 0..m {
        let Some((gnode, gval)) = interior.iter().map(|&s| (s, data.g(s, i))).min_by(|a, b| a.1.total_cmp(&b.1)) else {
            continue;
        };
        for j in 0..m {
            let cbest = grid
                .interior_slices()
                .flat_map(|slice| interior.iter().map(move |&s| grid.node(slice, s)))
                .map(|node| (node, costs.get(node, i, j)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((cnode, cval)) = cbest {
                o7.observe(gval + cval, || {
                    Witness::at(cnode, node_location(grid, cnode))
                        .modes([i + 1, j + 1])
                        .value("min_g_i", gval)
                        .value("min_g_node", gnode as f64)
                        .value("min_c_ij", cval)
                });
            }
        }
    }
    report.push(o7.finish());
    report
}

/// Largest `η` such that every simple cycle sum exceeds it at every closed-domain node.
pub fn cycle_margin(costs: &SwitchingCosts, grid: &Grid) -> Option<f64> {
    closure_full_nodes(grid).filter_map(|node| min_cycle_sum(costs.at(node), costs.m()).map(|(s, _)| s)).reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use proptest::prelude::*;

    fn grid1d() -> Grid {
        Grid::build(Domain::new(vec![(0.0, 1.0)], 1.0).unwrap(), &[5], 3).unwrap()
    }

    fn brute_min_cycle(c: &[f64], m: usize) -> f64 {
        // Every ordered selection of 2..=m distinct modes, rotations included.
        fn rec(c: &[f64], m: usize, path: &mut Vec<usize>, best: &mut f64) {
            if path.len() >= 2 {
                let mut s = 0.0;
                for w in path.windows(2) {
                    s += c[w[0] * m + w[1]];
                }
                s += c[path[path.len() - 1] * m + path[0]];
                *best = best.min(s);
            }
            for k in 0..m {
                if !path.contains(&k) {
                    path.push(k);
                    rec(c, m, path, best);
                    path.pop();
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(c, m, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn obstacle_examples() {
        let c2 = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(eval_obstacle(&[3.0, 5.0], &c2, 0), 4.0);
        assert_eq!(eval_obstacle(&[3.0], &[0.0], 0), f64::NEG_INFINITY);
        let c3 = [0.0, 3.0, 0.5, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(eval_obstacle(&[0.0, 2.0, 1.0], &c3, 0), 0.5);
        assert_eq!(switch_target(&[0.0, 2.0, 1.0], &c3, 0), Some(2));
        // Tie between modes 2 and 3 goes to the smaller index.
        assert_eq!(switch_target(&[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], 0), Some(1));
    }

    #[test]
    fn o3_fails_on_zero_two_cycle() {
        let grid = grid1d();
        let costs = SwitchingCosts::constant(&grid, &[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let rep = validate_cost_axioms(&costs, &grid, 0.0);
        let e = rep.get(Axiom::O3).unwrap();
        assert!(!e.passed);
        let w = e.witness.as_ref().unwrap();
        assert_eq!(w.modes, vec![1, 2, 1]);
        assert_eq!(w.get("cycle_sum"), Some(0.0));
    }

    #[test]
    fn constant_unit_costs_pass() {
        let grid = grid1d();
        let one = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let costs = SwitchingCosts::constant(&grid, &one).unwrap();
        let rep = validate_cost_axioms(&costs, &grid, 0.0);
        assert!(rep.passed(), "{rep}");
        assert_eq!(cycle_margin(&costs, &grid), Some(2.0));
    }

    #[test]
    fn o4_triple_witness() {
        let grid = grid1d();
        let c = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]];
        let costs = SwitchingCosts::constant(&grid, &c).unwrap();
        let rep = validate_cost_axioms(&costs, &grid, 0.0);
        let e = rep.get(Axiom::O4).unwrap();
        assert!(!e.passed);
        assert_eq!(e.witness.as_ref().unwrap().modes, vec![1, 2, 3]);
        assert_eq!(e.margin, -3.0);
    }

    #[test]
    fn o2_flags_nonzero_diagonal() {
        let grid = grid1d();
        let costs = SwitchingCosts::constant(&grid, &[vec![0.5, 1.0], vec![1.0, 0.0]]).unwrap();
        let rep = validate_cost_axioms(&costs, &grid, 0.0);
        assert!(!rep.get(Axiom::O2).unwrap().passed);
        assert_eq!(rep.get(Axiom::O2).unwrap().witness.as_ref().unwrap().modes, vec![1]);
    }

    #[test]
    fn data_axiom_examples() {
        let grid = grid1d();
        let costs = SwitchingCosts::constant(&grid, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let data = ProblemData::from_fn(&grid, 2, |_, _| 1.0, |_, _, _| 0.0).unwrap();
        let rep = validate_data_axioms(&costs, &data, &grid);
        assert!(rep.get(Axiom::O5).unwrap().passed);
        assert!(rep.get(Axiom::O7).unwrap().passed);

        let data = ProblemData::from_fn(&grid, 2, |_, x: &[f64]| x[0] * (1.0 - x[0]), |_, _, _| 2.0).unwrap();
        let rep = validate_data_axioms(&costs, &data, &grid);
        let e = rep.get(Axiom::O6).unwrap();
        assert!(!e.passed);
        // The diagonal c_ii = 0 enters the minimum alongside the off-diagonal 1.
        assert_eq!(e.margin, 0.0 - 2.0);
    }

    #[test]
    fn o7_catches_negative_data() {
        let grid = grid1d();
        let costs = SwitchingCosts::constant(&grid, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let data = ProblemData::from_fn(&grid, 2, |i, _| if i == 1 { -0.5 } else { 0.0 }, |_, _, _| 0.0).unwrap();
        let rep = validate_data_axioms(&costs, &data, &grid);
        let e = rep.get(Axiom::O7).unwrap();
        assert!(!e.passed);
        assert_eq!(e.witness.as_ref().unwrap().modes, vec![2, 2]);
    }

    #[test]
    fn floyd_path_agrees_on_large_m() {
        let m = 10;
        let mut c = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    c[i * m + j] = 1.0 + ((i * 7 + j * 3) % 5) as f64;
                }
            }
        }
        let (fw, cyc) = floyd_min_cycle(&c, m);
        let walked: f64 = cyc.windows(2).map(|w| c[w[0] * m + w[1]]).sum();
        assert_eq!(fw, walked);
        assert_eq!(cyc.first(), cyc.last());
    }

    proptest! {
        #[test]
        fn min_cycle_matches_brute_force(m in 2usize..=5, raw in proptest::collection::vec(-2.0f64..4.0, 25)) {
            let mut c = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        c[i * m + j] = raw[i * 5 + j];
                    }
                }
            }
            let (v, cyc) = min_cycle_sum(&c, m).unwrap();
            prop_assert!((v - brute_min_cycle(&c, m)).abs() <= 1e-12);
            let walked: f64 = cyc.windows(2).map(|w| c[w[0] * m + w[1]]).sum();
            prop_assert!((walked - v).abs() <= 1e-12);
        }

        #[test]
        fn obstacle_monotone(u in proptest::collection::vec(-5.0f64..5.0, 3), d in proptest::collection::vec(0.0f64..2.0, 3),
                             c in proptest::collection::vec(0.0f64..3.0, 9), i in 0usize..3) {
            let v: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
            prop_assert!(eval_obstacle(&u, &c, i) <= eval_obstacle(&v, &c, i));
        }

        #[test]
        fn obstacle_shift_equivariant(u in proptest::collection::vec(-5.0f64..5.0, 4), c in proptest::collection::vec(0.0f64..3.0, 16),
                                      s in -10.0f64..10.0, i in 0usize..4) {
            let shifted: Vec<f64> = u.iter().map(|a| a + s).collect();
            prop_assert!((eval_obstacle(&shifted, &c, i) - (eval_obstacle(&u, &c, i) + s)).abs() <= 1e-12 * (1.0 + s.abs()) * 10.0);
        }
    }
}
